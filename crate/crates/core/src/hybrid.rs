//! Hybrid factorization `F_opt ~ F_RF F_BB` with a constant-modulus analog
//! matrix, by alternating least squares and an analog solver.
//!
//! The Kronecker design `A = F_BB^T (x) I_{M_t}` is never formed: with
//! `x = vec(F_RF)` we have `A x = vec(F_RF F_BB)` and `A^H y = vec(Y F_BB^H)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_full_column_rank, project_modulus, re_inner, CMatrix, CVector, C64};

pub const OUTER_TOLERANCE: f64 = 1e-4;
pub const OUTER_MAX_ITER: usize = 30;
pub const GP_TOLERANCE: f64 = 1e-4;
pub const GP_MAX_ITER: usize = 100;

/// Line-search denominators at or below this trigger a steepest-descent restart.
const DENOMINATOR_FLOOR: f64 = 1e-15;

/// Analog precoder solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnalogSolver {
    #[serde(rename = "GP")]
    GradientProjection,
    #[serde(rename = "LSP")]
    LeastSquaresProjection,
    /// Manifold optimization; only its flop estimate is available.
    #[serde(rename = "MO")]
    ManifoldOptimization,
}

impl AnalogSolver {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::GradientProjection => "GP",
            Self::LeastSquaresProjection => "LSP",
            Self::ManifoldOptimization => "MO",
        }
    }
}

/// Factorization result.
#[derive(Debug, Clone)]
pub struct HybridPrecoder {
    /// `M_t x N_RF`, every entry of modulus `1/sqrt(M_t)`.
    pub analog: CMatrix,
    /// `N_RF x K`, scaled so that `||analog * baseband||_F^2 = K`.
    pub baseband: CMatrix,
    /// `||F_opt - F_RF F_BB||_F^2` of the last alternating pair, before the
    /// power normalization.
    pub residual: f64,
    pub iterations_used: usize,
    pub residual_history: Vec<f64>,
    /// Inner GP iterations summed over all outer iterations (0 for LSP).
    pub gp_iterations: usize,
}

impl HybridPrecoder {
    pub fn product(&self) -> CMatrix {
        &self.analog * &self.baseband
    }
}

/// Constant-modulus least squares `min ||f - A x||^2`, `|x_n| = 1/sqrt(M_t)`.
#[derive(Debug, Clone)]
pub struct CmlsProblem {
    /// `F_BB`, `N_RF x K`.
    pub baseband: CMatrix,
    /// `F_opt`, `M_t x K`.
    pub target: CMatrix,
}

impl CmlsProblem {
    pub fn new(baseband: CMatrix, target: CMatrix) -> Result<Self> {
        if baseband.ncols() != target.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "baseband has {} columns, target {}",
                baseband.ncols(),
                target.ncols()
            )));
        }
        Ok(Self { baseband, target })
    }

    pub fn antennas(&self) -> usize {
        self.target.nrows()
    }

    pub fn rf_chains(&self) -> usize {
        self.baseband.nrows()
    }

    pub fn unknown_len(&self) -> usize {
        self.antennas() * self.rf_chains()
    }

    pub fn modulus(&self) -> f64 {
        1.0 / (self.antennas() as f64).sqrt()
    }

    fn unvec(&self, x: &CVector) -> CMatrix {
        CMatrix::from_column_slice(self.antennas(), self.rf_chains(), x.as_slice())
    }

    /// `A x = vec(X F_BB)`.
    pub fn apply(&self, x: &CVector) -> CVector {
        let prod = self.unvec(x) * &self.baseband;
        CVector::from_column_slice(prod.as_slice())
    }

    /// `A^H y = vec(Y F_BB^H)`.
    pub fn apply_adjoint(&self, y: &CVector) -> CVector {
        let ymat = CMatrix::from_column_slice(self.antennas(), self.target.ncols(), y.as_slice());
        let prod = ymat * self.baseband.adjoint();
        CVector::from_column_slice(prod.as_slice())
    }

    pub fn target_vec(&self) -> CVector {
        CVector::from_column_slice(self.target.as_slice())
    }

    pub fn objective(&self, x: &CVector) -> f64 {
        (self.target_vec() - self.apply(x)).norm_squared()
    }

    /// `-2 A^H (f - A x)`.
    pub fn gradient(&self, x: &CVector) -> CVector {
        let r = self.target_vec() - self.apply(x);
        self.apply_adjoint(&r) * C64::from(-2.0)
    }

    /// Explicit `F_BB^T (x) I_{M_t}`, `(M_t K) x (M_t N_RF)`. Only for
    /// cross-checks at small sizes.
    pub fn kronecker_design(&self) -> CMatrix {
        let m = self.antennas();
        let bt = self.baseband.transpose();
        let mut out = CMatrix::zeros(m * bt.nrows(), m * bt.ncols());
        for i in 0..bt.nrows() {
            for j in 0..bt.ncols() {
                for d in 0..m {
                    out[(i * m + d, j * m + d)] = bt[(i, j)];
                }
            }
        }
        out
    }
}

/// `F_BB = F_RF^+ F_opt`.
pub fn digital_ls_step(analog: &CMatrix, target: &CMatrix) -> Result<CMatrix> {
    if analog.nrows() != target.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "analog has {} rows, target {}",
            analog.nrows(),
            target.nrows()
        )));
    }
    Ok(pinv_full_column_rank(analog)? * target)
}

/// GP run summary.
#[derive(Debug, Clone)]
pub struct GpOutcome {
    /// Best feasible iterate seen (the start included).
    pub x: CVector,
    pub objective: f64,
    /// Objective at the start and after every iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Phase-only projection onto `|x_n| = scale`.
fn project(x: &CVector, scale: f64) -> CVector {
    x.map(|z| project_modulus(z, scale))
}

/// Gradient projection with exact line search and Polak-Ribiere directions.
pub fn gp_analog_step(
    problem: &CmlsProblem,
    start: &CVector,
    tol: f64,
    max_iter: usize,
) -> Result<GpOutcome> {
    if start.len() != problem.unknown_len() {
        return Err(Error::ShapeMismatch(format!(
            "start has {} entries, expected {}",
            start.len(),
            problem.unknown_len()
        )));
    }
    let scale = problem.modulus();
    let f = problem.target_vec();
    let mut x = project(start, scale);
    let mut grad = problem.gradient(&x);
    let mut dir = -&grad;
    let mut eps = problem.objective(&x);
    let mut history = vec![eps];
    let mut best = (x.clone(), eps);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        let residual = &f - problem.apply(&x);
        let mut step = line_search(problem, &residual, &dir);
        if step.is_none_or(|a| a <= 0.0) {
            // not a usable descent direction: restart from steepest descent
            dir = -&grad;
            step = line_search(problem, &residual, &dir);
        }
        let Some(alpha) = step else {
            // zero gradient: already stationary
            converged = true;
            break;
        };
        iterations += 1;
        let x_next = project(&(&x + &dir * C64::from(alpha)), scale);
        let grad_next = problem.gradient(&x_next);
        let grad_sq = grad.norm_squared();
        let beta = if grad_sq > 0.0 {
            re_inner(&(&grad_next - &grad), &grad_next) / grad_sq
        } else {
            0.0
        };
        dir = -&grad_next + &dir * C64::from(beta);
        let eps_next = problem.objective(&x_next);
        history.push(eps_next);
        if eps_next < best.1 {
            best = (x_next.clone(), eps_next);
        }
        x = x_next;
        grad = grad_next;
        let delta = (eps_next - eps).abs();
        eps = eps_next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(GpOutcome {
        x: best.0,
        objective: best.1,
        history,
        iterations,
        converged,
    })
}

/// `argmin_{a} ||r - a A d||^2 = Re(r^H A d) / ||A d||^2`; `None` when the
/// denominator vanishes.
fn line_search(problem: &CmlsProblem, residual: &CVector, dir: &CVector) -> Option<f64> {
    let ad = problem.apply(dir);
    let denom = ad.norm_squared();
    if denom <= DENOMINATOR_FLOOR {
        return None;
    }
    Some(re_inner(residual, &ad) / denom)
}

/// One-shot analog design `(1/sqrt(M_t)) exp(j arg(F_opt F_BB^H))`.
pub fn lsp_analog(baseband: &CMatrix, target: &CMatrix) -> Result<CMatrix> {
    if baseband.ncols() != target.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "baseband has {} columns, target {}",
            baseband.ncols(),
            target.ncols()
        )));
    }
    let scale = 1.0 / (target.nrows() as f64).sqrt();
    Ok((target * baseband.adjoint()).map(|z| project_modulus(z, scale)))
}

/// Outer-loop controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub gp_tol: f64,
    pub gp_max_iter: usize,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            tol: OUTER_TOLERANCE,
            max_iter: OUTER_MAX_ITER,
            gp_tol: GP_TOLERANCE,
            gp_max_iter: GP_MAX_ITER,
        }
    }
}

/// Random-phase analog matrix with entries of modulus `1/sqrt(M_t)`.
pub fn random_phase_analog<R: Rng + ?Sized>(antennas: usize, rf_chains: usize, rng: &mut R) -> CMatrix {
    let scale = 1.0 / (antennas as f64).sqrt();
    CMatrix::from_fn(antennas, rf_chains, |_, _| {
        C64::from_polar(scale, rng.random_range(-PI..PI))
    })
}

/// Alternate `F_BB = F_RF^+ F_opt` with an analog update until the residual
/// settles, then scale `F_BB` to total power `K`.
///
/// GP is warm-started from the previous analog iterate. The first residual is
/// compared against `+inf`, so at least two outer iterations run unless
/// `max_iter` is 1.
pub fn approximate_hybrid<R: Rng + ?Sized>(
    target: &CMatrix,
    rf_chains: usize,
    solver: AnalogSolver,
    options: &HybridOptions,
    rng: &mut R,
) -> Result<HybridPrecoder> {
    let (m_t, k) = target.shape();
    if solver == AnalogSolver::ManifoldOptimization {
        return Err(Error::Unsupported(
            "manifold-optimization analog solver is not implemented".into(),
        ));
    }
    if k == 0 || rf_chains < k || rf_chains > m_t {
        return Err(Error::InvalidParameter(format!(
            "need K <= N_RF <= M_t, got K={k}, N_RF={rf_chains}, M_t={m_t}"
        )));
    }
    if options.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    if solver == AnalogSolver::LeastSquaresProjection && k == 1 && rf_chains > 1 {
        // phases of a rank-one product form a rank-one matrix
        return Err(Error::InvalidParameter(
            "least-squares projection with one receiver collapses F_RF to rank one; use N_RF = 1".into(),
        ));
    }
    let mut analog = random_phase_analog(m_t, rf_chains, rng);
    let mut baseband = CMatrix::zeros(rf_chains, k);
    let mut history = Vec::new();
    let mut previous = f64::INFINITY;
    let mut gp_iterations = 0;
    let mut iterations_used = 0;
    for _ in 0..options.max_iter {
        iterations_used += 1;
        baseband = digital_ls_step(&analog, target)?;
        analog = match solver {
            AnalogSolver::GradientProjection => {
                let problem = CmlsProblem::new(baseband.clone(), target.clone())?;
                let start = CVector::from_column_slice(analog.as_slice());
                let out = gp_analog_step(&problem, &start, options.gp_tol, options.gp_max_iter)?;
                gp_iterations += out.iterations;
                CMatrix::from_column_slice(m_t, rf_chains, out.x.as_slice())
            }
            AnalogSolver::LeastSquaresProjection => lsp_analog(&baseband, target)?,
            AnalogSolver::ManifoldOptimization => unreachable!(),
        };
        let eps = (target - &analog * &baseband).norm_squared();
        history.push(eps);
        let delta = (eps - previous).abs();
        previous = eps;
        if delta < options.tol {
            break;
        }
    }
    let norm = (&analog * &baseband).norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("hybrid product"));
    }
    let residual = previous;
    baseband *= C64::from((k as f64).sqrt() / norm);
    Ok(HybridPrecoder {
        analog,
        baseband,
        residual,
        iterations_used,
        residual_history: history,
        gp_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn unit_modulus(m: &CMatrix, scale: f64) -> bool {
        m.iter().all(|z| (z.norm() - scale).abs() < 1e-10)
    }

    #[test]
    fn ls_step_with_square_dft_analog_is_scaled_adjoint() {
        let m = 8;
        let scale = 1.0 / (m as f64).sqrt();
        let dft = CMatrix::from_fn(m, m, |i, j| {
            C64::from_polar(scale, 2.0 * PI * (i * j) as f64 / m as f64)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = random_matrix(m, 3, &mut rng);
        let bb = digital_ls_step(&dft, &target).unwrap();
        // dft is unitary here, so the pseudo-inverse is the adjoint
        let expect = dft.adjoint() * &target;
        assert!((bb - expect).norm() < 1e-10);
    }

    #[test]
    fn ls_step_recovers_consistent_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let analog = random_phase_analog(16, 4, &mut rng);
        let b = random_matrix(4, 2, &mut rng);
        let out = digital_ls_step(&analog, &(&analog * &b)).unwrap();
        assert!((out - b).norm() < 1e-10);
    }

    #[test]
    fn ls_step_residual_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let analog = random_matrix(16, 4, &mut rng);
        let target = random_matrix(16, 2, &mut rng);
        let bb = digital_ls_step(&analog, &target).unwrap();
        assert!((analog.adjoint() * (target - &analog * bb)).norm() < 1e-9);
    }

    #[test]
    fn ls_step_rejects_rank_deficient_analog() {
        let col = CVector::from_element(8, C64::new(0.5, 0.0));
        let analog = CMatrix::from_columns(&[col.clone(), col]);
        assert!(digital_ls_step(&analog, &CMatrix::zeros(8, 1)).is_err());
    }

    #[test]
    fn kronecker_design_matches_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = CmlsProblem::new(random_matrix(3, 2, &mut rng), random_matrix(5, 2, &mut rng)).unwrap();
        let a = p.kronecker_design();
        assert_eq!(a.shape(), (10, 15));
        let x = CVector::from_fn(15, |i, _| C64::new(i as f64, 1.0));
        assert!((&a * &x - p.apply(&x)).norm() < 1e-12);
        let y = CVector::from_fn(10, |i, _| C64::new(1.0, -(i as f64)));
        assert!((a.adjoint() * &y - p.apply_adjoint(&y)).norm() < 1e-12);
    }

    #[test]
    fn gp_does_not_move_from_phase_aligned_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = random_matrix(8, 2, &mut rng);
        let p = CmlsProblem::new(CMatrix::identity(2, 2), target.clone()).unwrap();
        let start = CVector::from_iterator(16, target.iter().map(|z| project_modulus(*z, p.modulus())));
        let out = gp_analog_step(&p, &start, 1e-12, 50).unwrap();
        assert!((out.x - &start).norm() < 1e-12);
        assert!((out.objective - p.objective(&start)).abs() < 1e-12);
    }

    #[test]
    fn gp_output_is_constant_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = CmlsProblem::new(random_matrix(4, 2, &mut rng), random_matrix(16, 2, &mut rng)).unwrap();
        let start = CVector::from_column_slice(random_phase_analog(16, 4, &mut rng).as_slice());
        let out = gp_analog_step(&p, &start, 1e-8, 100).unwrap();
        assert!(out.x.iter().all(|z| (z.norm() - 0.25).abs() < 1e-10));
        assert!(out.objective <= out.history[0]);
    }

    #[test]
    fn lsp_with_identity_baseband_extracts_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = random_matrix(9, 3, &mut rng);
        let rf = lsp_analog(&CMatrix::identity(3, 3), &target).unwrap();
        for (r, t) in rf.iter().zip(target.iter()) {
            assert!((r - project_modulus(*t, 1.0 / 3.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn lsp_reproduces_constant_phase_columns() {
        let phases = [0.3, -1.2];
        let target = CMatrix::from_fn(4, 2, |i, j| C64::from_polar(1.0 + i as f64, phases[j]));
        let rf = lsp_analog(&CMatrix::identity(2, 2), &target).unwrap();
        for j in 0..2 {
            for z in rf.column(j).iter() {
                assert!((z.arg() - phases[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lsp_matches_kronecker_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target = random_matrix(32, 4, &mut rng);
        let bb = random_matrix(4, 4, &mut rng);
        let rf = lsp_analog(&bb, &target).unwrap();
        let p = CmlsProblem::new(bb, target).unwrap();
        let literal = (p.kronecker_design().adjoint() * p.target_vec()).map(|z| project_modulus(z, p.modulus()));
        for (a, b) in rf.iter().zip(literal.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn square_analog_factorizes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = random_matrix(8, 2, &mut rng);
        let hp = approximate_hybrid(&target, 8, AnalogSolver::GradientProjection, &HybridOptions::default(), &mut rng)
            .unwrap();
        assert!(hp.residual < 1e-16, "{}", hp.residual);
        assert!(unit_modulus(&hp.analog, 1.0 / 8f64.sqrt()));
        assert!((hp.product().norm_squared() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn manifold_solver_is_unsupported() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let target = random_matrix(8, 2, &mut rng);
        assert!(matches!(
            approximate_hybrid(&target, 4, AnalogSolver::ManifoldOptimization, &HybridOptions::default(), &mut rng),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn lsp_single_receiver_needs_one_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let target = random_matrix(8, 1, &mut rng);
        let opts = HybridOptions::default();
        let lsp = AnalogSolver::LeastSquaresProjection;
        assert!(matches!(
            approximate_hybrid(&target, 3, lsp, &opts, &mut rng),
            Err(Error::InvalidParameter(_))
        ));
        assert!(approximate_hybrid(&target, 1, lsp, &opts, &mut rng).is_ok());
        assert!(approximate_hybrid(&target, 3, AnalogSolver::GradientProjection, &opts, &mut rng).is_ok());
    }

    #[test]
    fn rf_chain_bounds_are_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = random_matrix(8, 3, &mut rng);
        let opts = HybridOptions::default();
        assert!(approximate_hybrid(&target, 2, AnalogSolver::LeastSquaresProjection, &opts, &mut rng).is_err());
        assert!(approximate_hybrid(&target, 9, AnalogSolver::LeastSquaresProjection, &opts, &mut rng).is_err());
    }

    #[test]
    fn gp_outer_residual_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let target = random_matrix(32, 4, &mut rng);
        let hp = approximate_hybrid(&target, 8, AnalogSolver::GradientProjection, &HybridOptions::default(), &mut rng)
            .unwrap();
        for w in hp.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", hp.residual_history);
        }
    }
}
