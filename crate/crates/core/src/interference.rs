//! Zero-forcing second stage on the effective channels `w_k^H H_k F_RF F_BB`
//! and composition of the final transmit precoder.

use crate::error::{Error, Result};
use crate::geometry::ChannelRealization;
use crate::hybrid::HybridPrecoder;
use crate::linalg::{right_svd, CMatrix, CVector, C64, RANK_RTOL};

/// `K x K` matrix whose row `k` is `w_k^H H_k F`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannelSet {
    pub rows: CMatrix,
}

impl EffectiveChannelSet {
    pub fn receivers(&self) -> usize {
        self.rows.nrows()
    }
}

/// Final transmit precoder, `||matrix||_F^2 = K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositePrecoder {
    pub matrix: CMatrix,
    pub scheme_tag: String,
}

/// Row `k` = `w_k^H H_k precoder` for an arbitrary `M_t x K` precoder.
pub fn effective_rows(
    channels: &[ChannelRealization],
    combiners: &[CVector],
    precoder: &CMatrix,
) -> Result<CMatrix> {
    let k = channels.len();
    if combiners.len() != k || precoder.ncols() != k {
        return Err(Error::ShapeMismatch(format!(
            "{k} channels, {} combiners, precoder with {} columns",
            combiners.len(),
            precoder.ncols()
        )));
    }
    let mut rows = CMatrix::zeros(k, k);
    for (i, (ch, w)) in channels.iter().zip(combiners).enumerate() {
        if ch.matrix.nrows() != w.len() || ch.matrix.ncols() != precoder.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "receiver {i}: channel {:?}, combiner {}, precoder rows {}",
                ch.matrix.shape(),
                w.len(),
                precoder.nrows()
            )));
        }
        let row = (w.adjoint() * &ch.matrix) * precoder;
        rows.set_row(i, &row);
    }
    Ok(rows)
}

pub fn effective_channels(
    channels: &[ChannelRealization],
    combiners: &[CVector],
    hybrid: &HybridPrecoder,
) -> Result<EffectiveChannelSet> {
    Ok(EffectiveChannelSet {
        rows: effective_rows(channels, combiners, &hybrid.product())?,
    })
}

/// Column `k` is the last right singular vector of the effective matrix with
/// row `k` removed, so it is orthogonal to every other receiver's row.
pub fn bd_precoder(effective: &EffectiveChannelSet) -> Result<CMatrix> {
    let k = effective.receivers();
    if effective.rows.ncols() != k {
        return Err(Error::ShapeMismatch(format!(
            "effective channel is {:?}, expected square",
            effective.rows.shape()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("no receivers".into()));
    }
    if k == 1 {
        return Ok(CMatrix::from_element(1, 1, C64::new(1.0, 0.0)));
    }
    let mut out = CMatrix::zeros(k, k);
    for user in 0..k {
        let others = effective.rows.clone().remove_row(user);
        let svd = right_svd(&others)?;
        let sv = &svd.singular_values;
        let rank = sv.iter().filter(|&&s| s > RANK_RTOL * sv[0]).count();
        if sv[0] == 0.0 || rank != k - 1 {
            return Err(Error::DegenerateEffectiveChannel(format!(
                "receiver {user}: other receivers' effective rows have rank {rank}, need {}",
                k - 1
            )));
        }
        out.set_column(user, &svd.v.column(k - 1));
    }
    Ok(out)
}

/// `sqrt(K) / ||F_RF F_BB F_BD||_F * F_RF F_BB F_BD`.
pub fn compose_hybrid(
    hybrid: &HybridPrecoder,
    bd: &CMatrix,
    scheme_tag: impl Into<String>,
) -> Result<CompositePrecoder> {
    let product = hybrid.product();
    if product.ncols() != bd.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "hybrid product has {} columns, second stage {} rows",
            product.ncols(),
            bd.nrows()
        )));
    }
    normalized(product * bd, scheme_tag.into())
}

/// `F_RF F_BB` rescaled to total power `K`, without a second stage.
pub fn compose_without_bd(hybrid: &HybridPrecoder, scheme_tag: impl Into<String>) -> Result<CompositePrecoder> {
    normalized(hybrid.product(), scheme_tag.into())
}

fn normalized(matrix: CMatrix, scheme_tag: String) -> Result<CompositePrecoder> {
    let norm = matrix.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroNorm("composite precoder"));
    }
    let k = matrix.ncols() as f64;
    Ok(CompositePrecoder {
        matrix: matrix * C64::from(k.sqrt() / norm),
        scheme_tag,
    })
}
