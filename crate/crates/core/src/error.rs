use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by precoder construction, factorization and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank deficiency: expected rank {expected}, found {found}")]
    RankDeficient { expected: usize, found: usize },

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("{solver} did not converge after {iterations} iterations")]
    NonConvergence { solver: &'static str, iterations: usize },

    #[error("ill-conditioned factorization: {0}")]
    IllConditioned(String),

    #[error("degenerate effective channel: {0}")]
    DegenerateEffectiveChannel(String),

    #[error("zero norm in {0}")]
    ZeroNorm(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error at {path}: {message}")]
    Serialization { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
