//! Uniform linear arrays, sparse mmWave channels and beam misalignment.
//!
//! Angles are in degrees at every public boundary and converted to radians
//! internally.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector, C64};

/// Uniform linear array description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub element_count: usize,
    /// Element spacing over wavelength, `d / lambda`.
    pub spacing_ratio: f64,
}

impl ArrayGeometry {
    pub fn new(element_count: usize, spacing_ratio: f64) -> Result<Self> {
        if element_count == 0 {
            return Err(Error::InvalidParameter("array needs at least one element".into()));
        }
        if !(spacing_ratio.is_finite() && spacing_ratio > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spacing ratio must be positive, got {spacing_ratio}"
            )));
        }
        Ok(Self {
            element_count,
            spacing_ratio,
        })
    }

    /// Half-wavelength ULA.
    pub fn half_wavelength(element_count: usize) -> Result<Self> {
        Self::new(element_count, 0.5)
    }

    /// Phase increment between adjacent elements for a plane wave at `angle_rad`.
    #[inline]
    pub(crate) fn phase_step(&self, angle_rad: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.spacing_ratio * angle_rad.cos()
    }
}

/// Unit-norm ULA response `(1/sqrt(M)) [1, e^{j k d cos t}, ..., e^{j k d (M-1) cos t}]`.
pub fn steering_vector(angle_deg: f64, geometry: &ArrayGeometry) -> Result<CVector> {
    if !angle_deg.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite angle {angle_deg}")));
    }
    Ok(steering_unchecked(angle_deg, geometry))
}

pub(crate) fn steering_unchecked(angle_deg: f64, geometry: &ArrayGeometry) -> CVector {
    let m = geometry.element_count;
    let step = geometry.phase_step(angle_deg.to_radians());
    let scale = 1.0 / (m as f64).sqrt();
    CVector::from_fn(m, |i, _| cis(step * i as f64) * scale)
}

/// Uniform beam-alignment error with standard deviation `std_dev_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisalignmentModel {
    pub std_dev_deg: f64,
    /// `sqrt(3) * std_dev_deg`, the support half-width of the uniform error.
    pub half_width_deg: f64,
    /// Deviations beyond this bound count as alignment failure.
    pub mainlobe_cap_deg: f64,
}

impl MisalignmentModel {
    pub fn new(std_dev_deg: f64, mainlobe_cap_deg: f64) -> Result<Self> {
        if !(std_dev_deg.is_finite() && std_dev_deg >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "misalignment std dev must be >= 0, got {std_dev_deg}"
            )));
        }
        if mainlobe_cap_deg.is_nan() || mainlobe_cap_deg < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mainlobe cap must be >= 0, got {mainlobe_cap_deg}"
            )));
        }
        Ok(Self {
            std_dev_deg,
            half_width_deg: 3f64.sqrt() * std_dev_deg,
            mainlobe_cap_deg,
        })
    }

    /// Model without an alignment-failure bound.
    pub fn uncapped(std_dev_deg: f64) -> Result<Self> {
        Self::new(std_dev_deg, f64::INFINITY)
    }

    pub fn half_width_rad(&self) -> f64 {
        self.half_width_deg.to_radians()
    }

    pub fn exceeds_cap(&self, deviation_deg: f64) -> bool {
        deviation_deg.abs() > self.mainlobe_cap_deg
    }
}

/// Uniform draw on `[-beta, beta]` degrees.
pub fn sample_misalignment<R: Rng + ?Sized>(model: &MisalignmentModel, rng: &mut R) -> f64 {
    let beta = model.half_width_deg;
    if beta == 0.0 {
        return 0.0;
    }
    rng.random_range(-beta..=beta)
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub complex_gain: C64,
    pub aod_deg: f64,
    pub aoa_deg: f64,
}

/// Channel between the base station and one receiver, with the receiver's
/// estimated strongest-path angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `M_r x M_t` channel matrix.
    pub matrix: CMatrix,
    pub paths: Vec<PathParams>,
    pub strongest_index: usize,
    pub est_aod_deg: f64,
    pub est_aoa_deg: f64,
}

impl ChannelRealization {
    /// Assemble `sqrt(M_t M_r / L) sum_l g_l a_r(aoa_l) a_t(aod_l)^H`.
    pub fn from_paths(
        bs: &ArrayGeometry,
        ru: &ArrayGeometry,
        paths: Vec<PathParams>,
        est_aod_deg: f64,
        est_aoa_deg: f64,
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidParameter("channel needs at least one path".into()));
        }
        for p in &paths {
            for angle in [p.aod_deg, p.aoa_deg] {
                if !(0.0..=180.0).contains(&angle) {
                    return Err(Error::InvalidParameter(format!(
                        "path angle {angle} outside [0, 180] degrees"
                    )));
                }
            }
        }
        let scale = ((bs.element_count * ru.element_count) as f64 / paths.len() as f64).sqrt();
        let mut matrix = CMatrix::zeros(ru.element_count, bs.element_count);
        for p in &paths {
            let rx = steering_unchecked(p.aoa_deg, ru);
            let tx = steering_unchecked(p.aod_deg, bs);
            matrix += (rx * tx.adjoint()) * (p.complex_gain * scale);
        }
        let strongest_index = strongest_path(&paths);
        Ok(Self {
            matrix,
            paths,
            strongest_index,
            est_aod_deg,
            est_aoa_deg,
        })
    }

    pub fn strongest(&self) -> &PathParams {
        &self.paths[self.strongest_index]
    }

    pub fn true_aod_deg(&self) -> f64 {
        self.strongest().aod_deg
    }

    pub fn true_aoa_deg(&self) -> f64 {
        self.strongest().aoa_deg
    }
}

/// Index of the largest-magnitude gain; the lowest index wins ties.
fn strongest_path(paths: &[PathParams]) -> usize {
    let mut best = 0;
    for (i, p) in paths.iter().enumerate().skip(1) {
        if p.complex_gain.norm() > paths[best].complex_gain.norm() {
            best = i;
        }
    }
    best
}

/// Draw an `L`-path channel with CN(0, `gain_var`) gains and uniform angles,
/// then perturb the strongest path's AoD and AoA by independent misalignment
/// draws (`estimate = true - delta`).
pub fn generate_channel<R: Rng + ?Sized>(
    bs: &ArrayGeometry,
    ru: &ArrayGeometry,
    path_count: usize,
    gain_var: f64,
    model: &MisalignmentModel,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if path_count == 0 {
        return Err(Error::InvalidParameter("path_count must be >= 1".into()));
    }
    if !(gain_var.is_finite() && gain_var > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gain variance must be positive, got {gain_var}"
        )));
    }
    let component_sd = (gain_var / 2.0).sqrt();
    let paths: Vec<PathParams> = (0..path_count)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            PathParams {
                complex_gain: C64::new(re, im) * component_sd,
                aod_deg: rng.random_range(0.0..=180.0),
                aoa_deg: rng.random_range(0.0..=180.0),
            }
        })
        .collect();
    let strongest = paths[strongest_path(&paths)];
    let est_aod = strongest.aod_deg - sample_misalignment(model, rng);
    let est_aoa = strongest.aoa_deg - sample_misalignment(model, rng);
    ChannelRealization::from_paths(bs, ru, paths, est_aod, est_aoa)
}

/// Receive combiner pointed at the estimated AoA.
pub fn receive_combiner(channel: &ChannelRealization, ru: &ArrayGeometry) -> Result<CVector> {
    steering_vector(channel.est_aoa_deg, ru)
}
