//! Expected array response under uniformly distributed beam misalignment.
//!
//! Two routes to the same integral
//! `E[a_m(t + d)] = (1/2b) int_{-b}^{b} exp(a_m cos d - b_m sin d) dd`:
//! a fifth-order Maclaurin expansion integrated term by term, and
//! Gauss-Legendre quadrature. The expansion loses accuracy once
//! `|b_m| * beta` grows past a few tenths of a radian, which is why the
//! quadrature route is also exposed as a backend.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_unchecked, ArrayGeometry};
use crate::linalg::{CVector, C64};

/// Default node count for the quadrature backend.
pub const DEFAULT_QUADRATURE_NODES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedResponseParams {
    pub est_angle_deg: f64,
    /// Support half-width of the alignment error, radians.
    pub half_width_rad: f64,
    pub element_count: usize,
    pub spacing_ratio: f64,
}

impl ExpectedResponseParams {
    pub fn new(est_angle_deg: f64, half_width_rad: f64, element_count: usize) -> Result<Self> {
        Self::with_spacing(est_angle_deg, half_width_rad, element_count, 0.5)
    }

    pub fn with_spacing(
        est_angle_deg: f64,
        half_width_rad: f64,
        element_count: usize,
        spacing_ratio: f64,
    ) -> Result<Self> {
        if !est_angle_deg.is_finite() {
            return Err(Error::InvalidParameter("non-finite estimated angle".into()));
        }
        if !(0.0..PI).contains(&half_width_rad) {
            return Err(Error::InvalidParameter(format!(
                "half-width must lie in [0, pi), got {half_width_rad}"
            )));
        }
        if element_count == 0 {
            return Err(Error::InvalidParameter("element_count must be >= 1".into()));
        }
        if !(spacing_ratio.is_finite() && spacing_ratio > 0.0) {
            return Err(Error::InvalidParameter("spacing ratio must be positive".into()));
        }
        Ok(Self {
            est_angle_deg,
            half_width_rad,
            element_count,
            spacing_ratio,
        })
    }
}

/// Per-element exponent terms and Maclaurin coefficients `A_0..A_5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesCoefficients {
    pub a: C64,
    pub b: C64,
    pub coeffs: [C64; 6],
}

/// Coefficients for element `m` (1-based) at `angle_rad`, half-wavelength
/// spacing.
pub fn series_coefficients(m: usize, angle_rad: f64) -> SeriesCoefficients {
    series_coefficients_with_spacing(m, angle_rad, 0.5)
}

pub fn series_coefficients_with_spacing(
    m: usize,
    angle_rad: f64,
    spacing_ratio: f64,
) -> SeriesCoefficients {
    assert!(m >= 1, "element index is 1-based");
    let scale = 2.0 * PI * spacing_ratio * (m - 1) as f64;
    let a = C64::new(0.0, scale * angle_rad.cos());
    let b = C64::new(0.0, scale * angle_rad.sin());
    let one = C64::new(1.0, 0.0);
    let b2 = b * b;
    let b3 = b2 * b;
    let b4 = b2 * b2;
    // A_3 and A_5 are kept in their published form; they multiply odd powers
    // of the error and integrate to zero over the symmetric support.
    let coeffs = [
        one,
        -b,
        (b2 - a) * 0.5,
        ((a * 3.0 - one) * b - b3) / 6.0,
        ((a * 3.0 + one) * a - (a * 3.0 + 2.0) * b2 * 2.0 + b4) / 24.0,
        -((a + one) * a * 15.0 - (a + one) * b2 * 10.0 + b4 + one) / 120.0,
    ];
    SeriesCoefficients { a, b, coeffs }
}

/// Series evaluation of the expected `m`-th element (1-based), without the
/// `1/sqrt(M)` normalization.
pub fn expected_element(m: usize, params: &ExpectedResponseParams) -> C64 {
    let sc = series_coefficients_with_spacing(
        m,
        params.est_angle_deg.to_radians(),
        params.spacing_ratio,
    );
    let beta = params.half_width_rad;
    if beta == 0.0 {
        return sc.a.exp();
    }
    // (1/2b) * A_n * (b^{n+1} - (-1)^{n+1} b^{n+1}) / (n+1); odd n cancel
    let mut acc = C64::new(0.0, 0.0);
    for (n, coeff) in sc.coeffs.iter().enumerate() {
        let sign = if (n + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let moment = (beta.powi(n as i32 + 1) - sign * beta.powi(n as i32 + 1)) / (n + 1) as f64;
        acc += coeff * moment;
    }
    sc.a.exp() * acc / (2.0 * beta)
}

/// Backend used to evaluate the expected array response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedResponseBackend {
    #[default]
    Series,
    Quadrature,
}

impl ExpectedResponseBackend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Series => "series",
            Self::Quadrature => "quadrature",
        }
    }
}

impl std::str::FromStr for ExpectedResponseBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "series" => Ok(Self::Series),
            "quadrature" => Ok(Self::Quadrature),
            other => Err(Error::InvalidParameter(format!("unknown backend {other:?}"))),
        }
    }
}

/// Expected array response with the series backend.
pub fn expected_array_response(params: &ExpectedResponseParams) -> CVector {
    expected_array_response_with(params, ExpectedResponseBackend::Series)
        .expect("series backend is infallible")
}

pub fn expected_array_response_with(
    params: &ExpectedResponseParams,
    backend: ExpectedResponseBackend,
) -> Result<CVector> {
    let m_t = params.element_count;
    if params.half_width_rad == 0.0 {
        let geometry = ArrayGeometry::new(m_t, params.spacing_ratio)?;
        return Ok(steering_unchecked(params.est_angle_deg, &geometry));
    }
    let norm = 1.0 / (m_t as f64).sqrt();
    let mut out = CVector::zeros(m_t);
    for m in 1..=m_t {
        let e = match backend {
            ExpectedResponseBackend::Series => expected_element(m, params),
            ExpectedResponseBackend::Quadrature => {
                quadrature_expected_element(m, params, DEFAULT_QUADRATURE_NODES)?
            }
        };
        out[m - 1] = e * norm;
    }
    Ok(out)
}

/// Gauss-Legendre evaluation of the expected `m`-th element.
pub fn quadrature_expected_element(
    m: usize,
    params: &ExpectedResponseParams,
    node_count: usize,
) -> Result<C64> {
    if node_count < 2 {
        return Err(Error::InvalidParameter(format!(
            "quadrature needs at least 2 nodes, got {node_count}"
        )));
    }
    let theta = params.est_angle_deg.to_radians();
    let scale = 2.0 * PI * params.spacing_ratio * (m - 1) as f64;
    let a = C64::new(0.0, scale * theta.cos());
    let b = C64::new(0.0, scale * theta.sin());
    let beta = params.half_width_rad;
    if beta == 0.0 || m == 1 {
        return Ok(a.exp());
    }
    let rule = gauss_legendre(node_count);
    // (1/2b) int_{-b}^{b} f = (1/2) sum w_i f(b x_i)
    let sum: C64 = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| {
            let d = beta * x;
            (a * d.cos() - b * d.sin()).exp() * w
        })
        .sum();
    Ok(sum * 0.5)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Newton iteration on the Legendre three-term recurrence.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussLegendre { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let (pn, pn1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
    let d = n as f64 * (x * pn - pn1) / (x * x - 1.0);
    (pn, d)
}
