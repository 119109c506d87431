//! Min-max least squares over a shared power ball.
//!
//! Solves `min_{g_1..g_K} max_k ||B_k g_k - c_k||^2` subject to
//! `sum_k ||g_k||^2 <= R`. The receivers only interact through the power
//! budget, so the optimum is found by bisecting on the common level `t`:
//! for each `t` every receiver spends the least power that keeps its
//! residual at or below `t` (a Tikhonov solution whose regularization
//! weight is found by a one-dimensional search), and the smallest `t`
//! whose total spend fits in the ball is optimal.

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};

const LEVEL_BISECTIONS: usize = 200;
const LAMBDA_BISECTIONS: usize = 200;
const LOG_LAMBDA_RANGE: (f64, f64) = (-700.0, 700.0);

/// Result of a min-max ball solve.
#[derive(Debug, Clone)]
pub struct MinMaxSolution {
    pub weights: Vec<CVector>,
    /// `max_k ||B_k g_k - c_k||^2` at the returned weights.
    pub objective: f64,
    pub residuals: Vec<f64>,
    /// Whether the power budget binds at the optimum.
    pub ball_active: bool,
}

/// One receiver's system in its singular basis.
struct Spectral {
    /// Right singular vectors, `d x r`.
    v: CMatrix,
    sigma: Vec<f64>,
    /// `U^H c` restricted to nonzero singular values.
    proj: Vec<C64>,
    /// Energy of `c` outside the range of `B`.
    perp: f64,
    target_energy: f64,
}

impl Spectral {
    fn new(design: &CMatrix, target: &CVector) -> Result<Self> {
        let (rows, cols) = design.shape();
        if target.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "target length {} vs design rows {rows}",
                target.len()
            )));
        }
        let target_energy = target.norm_squared();
        if rows == 0 || cols == 0 {
            return Ok(Self {
                v: CMatrix::zeros(cols, 0),
                sigma: vec![],
                proj: vec![],
                perp: target_energy,
                target_energy,
            });
        }
        let svd = nalgebra::SVD::try_new(design.clone(), true, true, f64::EPSILON, 0).ok_or(
            Error::NonConvergence {
                solver: "svd",
                iterations: 0,
            },
        )?;
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested V").adjoint();
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
        let mut keep = Vec::new();
        let mut sigma = Vec::new();
        let mut proj = Vec::new();
        let mut captured = 0.0;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                let p = u.column(i).dotc(target);
                captured += p.norm_sqr();
                keep.push(i);
                sigma.push(s);
                proj.push(p);
            }
        }
        let v = CMatrix::from_fn(cols, keep.len(), |r, c| v[(r, keep[c])]);
        Ok(Self {
            v,
            sigma,
            proj,
            perp: (target_energy - captured).max(0.0),
            target_energy,
        })
    }

    fn residual(&self, lambda: f64) -> f64 {
        self.perp
            + self
                .sigma
                .iter()
                .zip(&self.proj)
                .map(|(s, p)| {
                    let f = lambda / (s * s + lambda);
                    f * f * p.norm_sqr()
                })
                .sum::<f64>()
    }

    fn power(&self, lambda: f64) -> f64 {
        self.sigma
            .iter()
            .zip(&self.proj)
            .map(|(s, p)| {
                let d = s * s + lambda;
                s * s * p.norm_sqr() / (d * d)
            })
            .sum()
    }

    fn weights(&self, lambda: f64) -> CVector {
        let coeffs = CVector::from_iterator(
            self.sigma.len(),
            self.sigma
                .iter()
                .zip(&self.proj)
                .map(|(s, p)| p * (s / (s * s + lambda))),
        );
        &self.v * coeffs
    }

    /// Least power with residual <= `level`; returns the regularization
    /// weight (`None` means zero weights suffice).
    fn lambda_for_level(&self, level: f64) -> Option<f64> {
        if level >= self.target_energy {
            return None;
        }
        if level <= self.perp || self.residual(0.0) >= level {
            return Some(0.0);
        }
        let (mut lo, mut hi) = LOG_LAMBDA_RANGE;
        for _ in 0..LAMBDA_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if self.residual(mid.exp()) <= level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        // lower end keeps the residual at or below the level
        Some(lo.exp())
    }

    fn power_for_level(&self, level: f64) -> f64 {
        match self.lambda_for_level(level) {
            None => 0.0,
            Some(l) => self.power(l),
        }
    }

    fn weights_for_level(&self, level: f64) -> CVector {
        match self.lambda_for_level(level) {
            None => CVector::zeros(self.v.nrows()),
            Some(l) => self.weights(l),
        }
    }

    fn ls_power(&self) -> f64 {
        self.power(0.0)
    }
}

/// Solve the min-max problem over the ball `sum ||g_k||^2 <= radius_sq`.
pub fn minmax_ball_solver(
    systems: &[(CMatrix, CVector)],
    radius_sq: f64,
) -> Result<MinMaxSolution> {
    if systems.is_empty() {
        return Err(Error::InvalidParameter("no systems to solve".into()));
    }
    if !(radius_sq.is_finite() && radius_sq > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius_sq must be positive, got {radius_sq}"
        )));
    }
    let spectra = systems
        .iter()
        .map(|(b, c)| Spectral::new(b, c))
        .collect::<Result<Vec<_>>>()?;

    let floor = spectra.iter().map(|s| s.perp).fold(0.0, f64::max);
    let total_ls: f64 = spectra.iter().map(Spectral::ls_power).sum();

    let (weights, ball_active) = if total_ls <= radius_sq {
        (spectra.iter().map(|s| s.weights(0.0)).collect::<Vec<_>>(), false)
    } else {
        let spend = |level: f64| spectra.iter().map(|s| s.power_for_level(level)).sum::<f64>();
        let level = if spend(floor) <= radius_sq {
            floor
        } else {
            let mut lo = floor;
            let mut hi = spectra.iter().map(|s| s.target_energy).fold(0.0, f64::max);
            let mut converged = false;
            for _ in 0..LEVEL_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if spend(mid) <= radius_sq {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 4.0 * f64::EPSILON * hi.max(1e-300) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    solver: "min-max level bisection",
                    iterations: LEVEL_BISECTIONS,
                });
            }
            hi
        };
        (
            spectra.iter().map(|s| s.weights_for_level(level)).collect(),
            true,
        )
    };

    let residuals: Vec<f64> = systems
        .iter()
        .zip(&weights)
        .map(|((b, c), g)| (b * g - c).norm_squared())
        .collect();
    let objective = residuals.iter().copied().fold(0.0, f64::max);
    Ok(MinMaxSolution {
        weights,
        objective,
        residuals,
        ball_active,
    })
}
