pub mod digital;
pub mod error;
pub mod error_stats;
pub mod geometry;
pub mod hybrid;
pub mod interference;
pub mod metrics;
pub mod sim;
pub mod linalg;

pub use error::{Error, Result};
