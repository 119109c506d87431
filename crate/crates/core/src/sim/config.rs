use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digital::DigitalScheme;
use crate::error::{Error, Result};
use crate::error_stats::ExpectedResponseBackend;
use crate::hybrid::AnalogSolver;

/// A digital target paired with an analog solver, written `FM-GP`, `ES-LSP`,
/// `CDP-GP`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchemeSpec {
    pub digital: DigitalScheme,
    pub analog: AnalogSolver,
}

impl SchemeSpec {
    pub const fn new(digital: DigitalScheme, analog: AnalogSolver) -> Self {
        Self { digital, analog }
    }

    pub fn tag(&self) -> String {
        let d = match self.digital {
            DigitalScheme::Conventional => "CDP",
            DigitalScheme::FlatMainlobe => "FM",
            DigitalScheme::ErrorStatistics => "ES",
        };
        format!("{d}-{}", self.analog.tag())
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Parse a digital scheme name: `CDP`, `FM`/`DP-FM`, `ES`/`DP-ES`.
pub fn parse_digital(s: &str) -> Result<DigitalScheme> {
    match s.to_ascii_uppercase().as_str() {
        "CDP" => Ok(DigitalScheme::Conventional),
        "FM" | "DP-FM" => Ok(DigitalScheme::FlatMainlobe),
        "ES" | "DP-ES" => Ok(DigitalScheme::ErrorStatistics),
        other => Err(Error::Config(format!("unknown digital scheme {other:?}"))),
    }
}

impl FromStr for SchemeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let (d, a) = upper
            .rsplit_once('-')
            .ok_or_else(|| Error::Config(format!("scheme {s:?} is not of the form FM-GP")))?;
        let analog = match a {
            "GP" => AnalogSolver::GradientProjection,
            "LSP" => AnalogSolver::LeastSquaresProjection,
            "MO" => AnalogSolver::ManifoldOptimization,
            other => return Err(Error::Config(format!("unknown analog solver {other:?}"))),
        };
        Ok(Self::new(parse_digital(d)?, analog))
    }
}

impl Serialize for SchemeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for SchemeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Second-stage handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BdMode {
    #[default]
    On,
    Off,
    /// Record both; records without the second stage carry a `-noBD` suffix.
    Both,
}

impl FromStr for BdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(Self::On),
            "off" => Ok(Self::Off),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown bd mode {other:?}"))),
        }
    }
}

fn default_schemes() -> Vec<SchemeSpec> {
    use AnalogSolver::*;
    use DigitalScheme::*;
    vec![
        SchemeSpec::new(Conventional, GradientProjection),
        SchemeSpec::new(Conventional, LeastSquaresProjection),
        SchemeSpec::new(FlatMainlobe, GradientProjection),
        SchemeSpec::new(FlatMainlobe, LeastSquaresProjection),
        SchemeSpec::new(ErrorStatistics, GradientProjection),
        SchemeSpec::new(ErrorStatistics, LeastSquaresProjection),
    ]
}

/// Experiment parameters. Every field has a default, so a config file only
/// needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub bs_antennas: usize,
    pub ru_antennas: usize,
    pub rf_chains: usize,
    pub receivers: usize,
    pub paths: usize,
    pub gain_variance: f64,
    /// Misalignment standard deviation in degrees; the half-width is `sqrt(3)` times this.
    pub delta_deg: f64,
    pub grid_samples: usize,
    pub snr_db_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<SchemeSpec>,
    pub es_backend: ExpectedResponseBackend,
    pub fm_tol: f64,
    pub fm_max_iter: usize,
    pub hybrid_tol: f64,
    pub hybrid_max_iter: usize,
    pub gp_tol: f64,
    pub gp_max_iter: usize,
    pub bd: BdMode,
    /// Draw path angles once and reuse them in every trial.
    pub fixed_geometry: bool,
    /// Minimum spacing of estimated AoDs between receivers; defaults to twice
    /// the misalignment half-width so that grids never overlap.
    pub min_separation_deg: Option<f64>,
    /// Minimum gap between receivers' misalignment intervals in spatial
    /// frequency (`cos` of the angle), in units of the null-to-null mainlobe
    /// width `2 / bs_antennas`. Zero disables the check.
    pub beam_gap: f64,
    /// Redraws allowed per trial before the geometry is declared infeasible.
    pub max_redraws: usize,
    /// Pinned estimated AoDs for beampattern output; otherwise trial 0's.
    pub beampattern_aods_deg: Option<Vec<f64>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            bs_antennas: 128,
            ru_antennas: 32,
            rf_chains: 8,
            receivers: 4,
            paths: 3,
            gain_variance: 1.0,
            delta_deg: 1.154,
            grid_samples: 8,
            snr_db_grid: vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            trials: 1000,
            seed: 1,
            schemes: default_schemes(),
            es_backend: ExpectedResponseBackend::Series,
            fm_tol: crate::digital::FM_TOLERANCE,
            fm_max_iter: crate::digital::FM_MAX_ITER,
            hybrid_tol: crate::hybrid::OUTER_TOLERANCE,
            hybrid_max_iter: crate::hybrid::OUTER_MAX_ITER,
            gp_tol: crate::hybrid::GP_TOLERANCE,
            gp_max_iter: crate::hybrid::GP_MAX_ITER,
            bd: BdMode::On,
            fixed_geometry: false,
            min_separation_deg: None,
            beam_gap: 3.0,
            max_redraws: 10_000,
            beampattern_aods_deg: None,
        }
    }
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn half_width_deg(&self) -> f64 {
        3f64.sqrt() * self.delta_deg
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation_deg.unwrap_or(2.0 * self.half_width_deg())
    }

    /// `beam_gap` in spatial-frequency units.
    pub fn min_spatial_gap(&self) -> f64 {
        self.beam_gap * 2.0 / self.bs_antennas as f64
    }

    /// Inclusive SNR grid `min, min+step, ..., <= max`.
    pub fn snr_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0 && min.is_finite() && max.is_finite()) || max < min {
            return Err(Error::Config(format!("bad SNR range {min}..{max} step {step}")));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| min + i as f64 * step).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.bs_antennas == 0 || self.ru_antennas == 0 {
            return fail("antenna counts must be positive".into());
        }
        if self.receivers == 0 || self.receivers > self.rf_chains || self.rf_chains > self.bs_antennas {
            return fail(format!(
                "need 1 <= receivers <= rf_chains <= bs_antennas, got {} / {} / {}",
                self.receivers, self.rf_chains, self.bs_antennas
            ));
        }
        if self.paths == 0 {
            return fail("paths must be >= 1".into());
        }
        if !(self.gain_variance > 0.0 && self.gain_variance.is_finite()) {
            return fail("gain_variance must be positive".into());
        }
        if !(self.delta_deg >= 0.0 && self.delta_deg.is_finite()) {
            return fail("delta_deg must be finite and non-negative".into());
        }
        if self.grid_samples == 0 {
            return fail("grid_samples must be >= 1".into());
        }
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.snr_db_grid.is_empty() || self.snr_db_grid.iter().any(|s| !s.is_finite()) {
            return fail("snr_db_grid must be non-empty and finite".into());
        }
        if self.schemes.is_empty() {
            return fail("no schemes configured".into());
        }
        if self.fm_max_iter == 0 || self.hybrid_max_iter == 0 {
            return fail("iteration caps must be >= 1".into());
        }
        if let Some(s) = self.min_separation_deg {
            if !(s >= 0.0 && s.is_finite()) {
                return fail("min_separation_deg must be finite and non-negative".into());
            }
        }
        if !(self.beam_gap >= 0.0 && self.beam_gap.is_finite()) {
            return fail("beam_gap must be finite and non-negative".into());
        }
        if let Some(aods) = &self.beampattern_aods_deg {
            if aods.len() != self.receivers {
                return fail(format!(
                    "beampattern_aods_deg has {} entries for {} receivers",
                    aods.len(),
                    self.receivers
                ));
            }
        }
        Ok(())
    }
}
