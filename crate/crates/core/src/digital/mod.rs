//! Fully-digital precoders: conventional zero-forcing (CDP), error-statistics
//! robust (DP-ES) and flat-mainlobe robust (DP-FM).

mod minmax;

pub use minmax::{minmax_ball_solver, MinMaxSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_unchecked, steering_vector, ArrayGeometry};
use crate::linalg::{machine_rank_rtol, rank_with_tol, right_svd, CMatrix, CVector, C64};

/// Defaults for the alternating fairness loop.
pub const FM_TOLERANCE: f64 = 1e-4;
pub const FM_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DigitalScheme {
    #[serde(rename = "CDP")]
    Conventional,
    #[serde(rename = "DP-FM")]
    FlatMainlobe,
    #[serde(rename = "DP-ES")]
    ErrorStatistics,
}

impl DigitalScheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Conventional => "CDP",
            Self::FlatMainlobe => "DP-FM",
            Self::ErrorStatistics => "DP-ES",
        }
    }
}

/// `M_t x K` fully-digital precoder; column `k` serves receiver `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalPrecoder {
    pub matrix: CMatrix,
    pub scheme: DigitalScheme,
}

impl DigitalPrecoder {
    pub fn receivers(&self) -> usize {
        self.matrix.ncols()
    }
}

/// `N` uniformly spaced angles on `[center - half_width, center + half_width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub center_deg: f64,
    pub half_width_deg: f64,
    pub samples: Vec<f64>,
}

impl AngleGrid {
    pub fn new(center_deg: f64, half_width_deg: f64, sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::InvalidParameter("grid needs at least one sample".into()));
        }
        if !(center_deg.is_finite() && half_width_deg.is_finite() && half_width_deg >= 0.0) {
            return Err(Error::InvalidParameter("grid center/width must be finite".into()));
        }
        let samples = if sample_count == 1 {
            vec![center_deg]
        } else {
            let step = 2.0 * half_width_deg / (sample_count - 1) as f64;
            (0..sample_count)
                .map(|i| center_deg - half_width_deg + step * i as f64)
                .collect()
        };
        Ok(Self {
            center_deg,
            half_width_deg,
            samples,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// `N x M_t` matrix whose rows are `a(phi)^H`.
    pub fn response_matrix(&self, bs: &ArrayGeometry) -> CMatrix {
        stack_adjoint_rows(
            &self
                .samples
                .iter()
                .map(|&phi| steering_unchecked(phi, bs))
                .collect::<Vec<_>>(),
            bs.element_count,
        )
    }

    fn overlaps(&self, other: &AngleGrid) -> bool {
        (self.center_deg - other.center_deg).abs() <= self.half_width_deg + other.half_width_deg
    }
}

/// Orthonormal basis of the right null space of an interference matrix.
#[derive(Debug, Clone)]
pub struct NullSpaceBasis {
    pub basis: CMatrix,
    pub source_rank: usize,
}

/// Rows `v_i^H` stacked into a matrix.
pub(crate) fn stack_adjoint_rows(vectors: &[CVector], cols: usize) -> CMatrix {
    CMatrix::from_fn(vectors.len(), cols, |r, c| vectors[r][c].conj())
}

/// SVD-derived basis of `{x : A x = 0}`, columns phase-normalized.
///
/// An empty interference matrix (no other receivers) yields the identity.
/// Rank is judged at machine precision, so only numerically coincident rows
/// are reported as deficient.
pub fn null_space_basis(interference: &CMatrix) -> Result<NullSpaceBasis> {
    let (rows, cols) = interference.shape();
    if cols == 0 {
        return Err(Error::InvalidParameter("interference matrix has no columns".into()));
    }
    if rows == 0 {
        return Ok(NullSpaceBasis {
            basis: CMatrix::identity(cols, cols),
            source_rank: 0,
        });
    }
    if rows >= cols {
        return Err(Error::InfeasibleGeometry(format!(
            "{rows} interference rows leave no null space in {cols} dimensions"
        )));
    }
    let svd = right_svd(interference)?;
    let rank = rank_with_tol(&svd.singular_values, machine_rank_rtol(rows, cols));
    if rank != rows {
        return Err(Error::RankDeficient {
            expected: rows,
            found: rank,
        });
    }
    Ok(NullSpaceBasis {
        basis: svd.v.columns(rank, cols - rank).into_owned(),
        source_rank: rank,
    })
}

/// Complement of the leading `rows` right singular vectors of `interference`.
///
/// Unlike [`null_space_basis`] this does not insist on full row rank: densely
/// sampled grids near endfire have singular values below machine precision,
/// and discarding them leaves the nulling residual at the same level.
/// `source_rank` reports the numerical rank for diagnostics.
pub fn null_space_complement(interference: &CMatrix) -> Result<NullSpaceBasis> {
    let (rows, cols) = interference.shape();
    if rows == 0 {
        return null_space_basis(interference);
    }
    if rows >= cols {
        return Err(Error::InfeasibleGeometry(format!(
            "{rows} interference rows leave no null space in {cols} dimensions"
        )));
    }
    let svd = right_svd(interference)?;
    let rank = rank_with_tol(&svd.singular_values, machine_rank_rtol(rows, cols));
    Ok(NullSpaceBasis {
        basis: svd.v.columns(rows, cols - rows).into_owned(),
        source_rank: rank,
    })
}

/// Columns `V_k V_k^H a_k`, with `V_k` spanning the null space of every other
/// receiver's response, scaled to `||F||_F^2 = K`.
fn zero_forcing_projection(responses: &[CVector], scheme: DigitalScheme) -> Result<DigitalPrecoder> {
    let k_count = responses.len();
    if k_count == 0 {
        return Err(Error::InvalidParameter("need at least one receiver".into()));
    }
    let m_t = responses[0].len();
    if responses.iter().any(|r| r.len() != m_t) {
        return Err(Error::ShapeMismatch("response vectors differ in length".into()));
    }
    if k_count > m_t {
        return Err(Error::InfeasibleGeometry(format!(
            "{k_count} receivers exceed {m_t} antennas"
        )));
    }
    // coincident responses null each other entirely
    let all = stack_adjoint_rows(responses, m_t);
    let sv: Vec<f64> = all.singular_values().iter().copied().collect();
    let rank = rank_with_tol(&sv, machine_rank_rtol(k_count, m_t));
    if rank < k_count {
        return Err(Error::RankDeficient {
            expected: k_count,
            found: rank,
        });
    }
    let mut matrix = CMatrix::zeros(m_t, k_count);
    for k in 0..k_count {
        let others: Vec<CVector> = responses
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, r)| r.clone())
            .collect();
        let basis = null_space_basis(&stack_adjoint_rows(&others, m_t))?.basis;
        let col = &basis * (basis.adjoint() * &responses[k]);
        matrix.set_column(k, &col);
    }
    let norm = matrix.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("zero-forcing precoder"));
    }
    matrix *= C64::from((k_count as f64).sqrt() / norm);
    Ok(DigitalPrecoder { matrix, scheme })
}

/// Conventional zero-forcing precoder steered at the estimated AoDs.
pub fn conventional_dp(est_aods_deg: &[f64], bs: &ArrayGeometry) -> Result<DigitalPrecoder> {
    let responses = est_aods_deg
        .iter()
        .map(|&a| steering_vector(a, bs))
        .collect::<Result<Vec<_>>>()?;
    zero_forcing_projection(&responses, DigitalScheme::Conventional)
}

/// Error-statistics precoder from per-receiver expected array responses.
pub fn es_precoder(expected_responses: &[CVector]) -> Result<DigitalPrecoder> {
    zero_forcing_projection(expected_responses, DigitalScheme::ErrorStatistics)
}

/// Output of the flat-mainlobe alternating optimization.
#[derive(Debug, Clone)]
pub struct FmOutcome {
    pub precoder: DigitalPrecoder,
    /// Min-max objective after each weight update.
    pub epsilons: Vec<f64>,
    pub converged: bool,
}

/// Flat-mainlobe precoder: alternate an exact min-max weight solve with
/// fixed target phases and a phase update `chi_k = arg(A_k V_k g_k)`.
pub fn fm_precoder(
    grids: &[AngleGrid],
    bs: &ArrayGeometry,
    tol: f64,
    max_iter: usize,
) -> Result<FmOutcome> {
    let k_count = grids.len();
    if k_count == 0 {
        return Err(Error::InvalidParameter("need at least one receiver grid".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    let m_t = bs.element_count;
    let interference_rows: usize = grids.iter().map(AngleGrid::sample_count).sum::<usize>()
        - grids.iter().map(AngleGrid::sample_count).min().unwrap_or(0);
    if interference_rows >= m_t {
        return Err(Error::InfeasibleGeometry(format!(
            "{interference_rows} interference rows leave no null space with {m_t} antennas"
        )));
    }
    for j in 0..k_count {
        for k in (j + 1)..k_count {
            if grids[j].overlaps(&grids[k]) {
                return Err(Error::InfeasibleGeometry(format!(
                    "grids of receivers {j} and {k} overlap ({:.3} vs {:.3} deg)",
                    grids[j].center_deg, grids[k].center_deg
                )));
            }
        }
    }

    let responses: Vec<CMatrix> = grids.iter().map(|g| g.response_matrix(bs)).collect();
    let mut designs = Vec::with_capacity(k_count);
    let mut bases = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let others: Vec<&CMatrix> = (0..k_count).filter(|&j| j != k).map(|j| &responses[j]).collect();
        let rows: usize = others.iter().map(|m| m.nrows()).sum();
        let mut interference = CMatrix::zeros(rows, m_t);
        let mut r0 = 0;
        for m in others {
            interference.view_mut((r0, 0), m.shape()).copy_from(m);
            r0 += m.nrows();
        }
        let basis = null_space_complement(&interference)?.basis;
        designs.push(&responses[k] * &basis);
        bases.push(basis);
    }

    // chi^(0) = 0
    let mut targets: Vec<CVector> = grids
        .iter()
        .map(|g| CVector::from_element(g.sample_count(), C64::new(1.0, 0.0)))
        .collect();
    let radius_sq = k_count as f64;
    let mut epsilons = Vec::new();
    let mut weights = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let systems: Vec<(CMatrix, CVector)> = designs
            .iter()
            .cloned()
            .zip(targets.iter().cloned())
            .collect();
        let sol = minmax_ball_solver(&systems, radius_sq)?;
        let eps = sol.objective;
        weights = sol.weights;
        for k in 0..k_count {
            targets[k] = unit_phasors(&(&designs[k] * &weights[k]));
        }
        let done = epsilons.last().is_some_and(|&prev: &f64| (prev - eps).abs() < tol);
        epsilons.push(eps);
        if done {
            converged = true;
            break;
        }
    }

    let mut matrix = CMatrix::zeros(m_t, k_count);
    for k in 0..k_count {
        matrix.set_column(k, &(&bases[k] * &weights[k]));
    }
    Ok(FmOutcome {
        precoder: DigitalPrecoder {
            matrix,
            scheme: DigitalScheme::FlatMainlobe,
        },
        epsilons,
        converged,
    })
}

/// `exp(j arg z)` entrywise; zero entries map to 1.
fn unit_phasors(v: &CVector) -> CVector {
    v.map(|z| if z.norm() == 0.0 { C64::new(1.0, 0.0) } else { z / z.norm() })
}

/// `|a(phi)^H f|` minimized over a grid.
pub fn min_grid_gain(column: &CVector, grid: &AngleGrid, bs: &ArrayGeometry) -> f64 {
    grid.samples
        .iter()
        .map(|&phi| steering_unchecked(phi, bs).dotc(column).norm())
        .fold(f64::INFINITY, f64::min)
}
