//! Beampatterns, achievable rates and closed-form flop counts of the analog
//! solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_unchecked, ArrayGeometry, ChannelRealization};
use crate::hybrid::AnalogSolver;
use crate::interference::CompositePrecoder;
use crate::linalg::CVector;

/// `|a(phi)^H f|` sampled at `angles_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beampattern {
    pub angles_deg: Vec<f64>,
    pub gains: Vec<f64>,
}

pub fn beampattern(column: &CVector, angles_deg: &[f64], bs: &ArrayGeometry) -> Beampattern {
    let gains = angles_deg
        .iter()
        .map(|&phi| steering_unchecked(phi, bs).dotc(column).norm())
        .collect();
    Beampattern {
        angles_deg: angles_deg.to_vec(),
        gains,
    }
}

/// Noise variance for a given SNR in dB at unit transmit power.
pub fn snr_db_to_sigma_sq(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// `log2(1 + (P/K)|w^H H f_k|^2 / (sigma^2 + sum_{j != k} (P/K)|w^H H f_j|^2))`
/// with `K` the number of precoder columns.
pub fn per_user_rate(
    channel: &ChannelRealization,
    combiner: &CVector,
    composite: &CompositePrecoder,
    user_index: usize,
    power: f64,
    sigma_sq: f64,
) -> f64 {
    let k = composite.matrix.ncols();
    let row = (combiner.adjoint() * &channel.matrix) * &composite.matrix;
    let per_stream = power / k as f64;
    let mut signal = 0.0;
    let mut interference = 0.0;
    for j in 0..k {
        let p = per_stream * row[(0, j)].norm_sqr();
        if j == user_index {
            signal = p;
        } else {
            interference += p;
        }
    }
    (1.0 + signal / (sigma_sq + interference)).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_user_bps_hz: Vec<f64>,
    pub sum_bps_hz: f64,
    pub snr_db: f64,
    pub sigma_sq: f64,
    pub power: f64,
}

/// Rates of all receivers at `snr_db` with unit transmit power.
pub fn rate_report(
    channels: &[ChannelRealization],
    combiners: &[CVector],
    composite: &CompositePrecoder,
    snr_db: f64,
) -> Result<RateReport> {
    let k = composite.matrix.ncols();
    if channels.len() != k || combiners.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} channels and {} combiners for a {k}-column precoder",
            channels.len(),
            combiners.len()
        )));
    }
    let power = 1.0;
    let sigma_sq = snr_db_to_sigma_sq(snr_db);
    let per_user: Vec<f64> = (0..k)
        .map(|i| per_user_rate(&channels[i], &combiners[i], composite, i, power, sigma_sq))
        .collect();
    Ok(RateReport {
        sum_bps_hz: per_user.iter().sum(),
        per_user_bps_hz: per_user,
        snr_db,
        sigma_sq,
        power,
    })
}

/// Line-search iterations and iteration cap behind the published cost table.
pub const TABLE_LINE_SEARCH_ITERS: u32 = 2;
pub const TABLE_MAX_ITERS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopParams {
    pub antennas: u32,
    pub rf_chains: u32,
    pub receivers: u32,
    pub line_search_iters: u32,
    pub max_iters: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopEstimate {
    pub scheme: AnalogSolver,
    pub count: f64,
    pub params: FlopParams,
}

impl FlopEstimate {
    pub fn new(scheme: AnalogSolver, params: FlopParams) -> Self {
        let FlopParams {
            antennas: m,
            rf_chains: n,
            receivers: k,
            line_search_iters: ls,
            max_iters: it,
        } = params;
        let count = match scheme {
            AnalogSolver::ManifoldOptimization => flops_mo(m, n, k, ls, it),
            AnalogSolver::GradientProjection => flops_gp(m, n, k, it),
            AnalogSolver::LeastSquaresProjection => flops_lsp(m, n, k),
        };
        Self { scheme, count, params }
    }
}

pub fn flops_mo(antennas: u32, rf_chains: u32, receivers: u32, line_search_iters: u32, max_iters: u32) -> f64 {
    let (m, n, k) = (antennas as f64, rf_chains as f64, receivers as f64);
    let (ls, it) = (line_search_iters as f64, max_iters as f64);
    2.0 * it * m * (2.0 * ls * (m * n + 2.0 * ls) * k + (ls + 1.0) * m * n * n + (2.0 * ls + 14.0) * n)
}

pub fn flops_gp(antennas: u32, rf_chains: u32, receivers: u32, max_iters: u32) -> f64 {
    let (m, n, k, it) = (antennas as f64, rf_chains as f64, receivers as f64, max_iters as f64);
    m * it * (7.0 * n * (m * k + 1.0) + 2.0 * k)
}

pub fn flops_lsp(antennas: u32, rf_chains: u32, receivers: u32) -> f64 {
    let (m, n, k) = (antennas as f64, rf_chains as f64, receivers as f64);
    m * n * (m * k + 1.0)
}
