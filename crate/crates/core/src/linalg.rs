//! Dense complex linear algebra shared by the precoder modules.
//!
//! Thin wrappers around `nalgebra`: a full right-singular basis (the thin SVD
//! does not return the null-space columns of a wide matrix), a deterministic
//! column-phase convention and a rank-checked pseudo-inverse.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Singular values below this fraction of the largest one count as zero in
/// the effective-channel rank test.
pub const RANK_RTOL: f64 = 1e-10;

/// Right singular vectors of `a` as a full square basis, with singular values
/// sorted in decreasing order.
///
/// The returned singular-value vector has `a.ncols()` entries; columns of `V`
/// past `min(rows, cols)` span the null space and carry zero.
pub struct RightSvd {
    pub singular_values: Vec<f64>,
    pub v: CMatrix,
}

pub fn right_svd(a: &CMatrix) -> Result<RightSvd> {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return Err(Error::InvalidParameter("matrix has no columns".into()));
    }
    // Zero rows leave the right singular vectors unchanged but force
    // nalgebra to return a square V.
    let padded = if rows < cols {
        let mut p = CMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = nalgebra::SVD::try_new(padded, false, true, f64::EPSILON, 0).ok_or(
        Error::NonConvergence {
            solver: "svd",
            iterations: 0,
        },
    )?;
    let v_t = svd.v_t.expect("requested V");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.resize(cols, 0.0);
    let mut v = v_t.adjoint();
    phase_normalize_columns(&mut v);
    Ok(RightSvd {
        singular_values: sv,
        v,
    })
}

/// Numerical rank with threshold `rtol * sigma_max`.
pub fn rank_with_tol(singular_values: &[f64], rtol: f64) -> usize {
    let smax = singular_values.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rtol * smax).count()
}

/// LAPACK-style default rank tolerance: `max(rows, cols) * eps`.
pub fn machine_rank_rtol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Rotate each column so its largest-magnitude entry is real and positive.
pub fn phase_normalize_columns(m: &mut CMatrix) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, z) in col.iter().enumerate() {
            let a = z.norm();
            // strict comparison keeps the first index on ties
            if a > best_abs + 1e-14 {
                best_abs = a;
                best = i;
            }
        }
        if best_abs > 0.0 {
            let rot = col[best].conj() / best_abs;
            for z in col.iter_mut() {
                *z *= rot;
            }
        }
    }
}

/// Moore-Penrose pseudo-inverse of a full-column-rank matrix.
pub fn pinv_full_column_rank(a: &CMatrix) -> Result<CMatrix> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::IllConditioned(format!(
            "{rows}x{cols} matrix cannot have full column rank"
        )));
    }
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0).ok_or(
        Error::NonConvergence {
            solver: "svd",
            iterations: 0,
        },
    )?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let rank = rank_with_tol(&sv, RANK_RTOL);
    if rank < cols {
        return Err(Error::IllConditioned(format!(
            "analog matrix rank {rank} < {cols} columns"
        )));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    // A^+ = V S^-1 U^H
    let mut vs = v_t.adjoint();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        col /= C64::from(sv[j]);
    }
    Ok(vs * u.adjoint())
}

/// Unit-modulus phasor `exp(j*phase)`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// `scale * exp(j*arg(z))`, mapping zero to `scale` (phase 0).
#[inline]
pub fn project_modulus(z: C64, scale: f64) -> C64 {
    if z.norm() == 0.0 {
        C64::new(scale, 0.0)
    } else {
        z * (scale / z.norm())
    }
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Real part of the Hermitian inner product `x^H y`.
pub fn re_inner(x: &CVector, y: &CVector) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}
