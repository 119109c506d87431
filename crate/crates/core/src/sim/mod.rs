//! Monte-Carlo experiment harness: scenario drawing, per-scheme precoder
//! pipeline, rate evaluation and result files.

mod config;
mod output;

pub use config::{parse_digital, BdMode, SchemeSpec, SystemConfig};
pub use output::{
    emit_beampattern, emit_results, emit_traces, read_results_json, summarize, summary_path, write_summary,
    OutputFormat, SummaryRow,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digital::{conventional_dp, es_precoder, fm_precoder, min_grid_gain, AngleGrid, DigitalScheme};
use crate::error::{Error, Result};
use crate::error_stats::{expected_array_response_with, ExpectedResponseBackend, ExpectedResponseParams};
use crate::geometry::{
    generate_channel, receive_combiner, sample_misalignment, ArrayGeometry, ChannelRealization, MisalignmentModel,
    PathParams,
};
use crate::hybrid::{
    approximate_hybrid, digital_ls_step, gp_analog_step, random_phase_analog, AnalogSolver, CmlsProblem,
    HybridOptions, HybridPrecoder,
};
use crate::interference::{bd_precoder, compose_hybrid, compose_without_bd, effective_channels, CompositePrecoder};
use crate::linalg::{CMatrix, CVector, C64};
use crate::metrics::{beampattern, rate_report};

/// Suffix on scheme tags of records evaluated without the second stage.
pub const NO_BD_SUFFIX: &str = "-noBD";

/// Status of a record whose pipeline completed.
pub const STATUS_OK: &str = "ok";

/// One (trial, scheme variant, SNR) outcome. Failed pipelines keep their
/// error text in `status`, no rates and a zero `sum_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub scheme: String,
    pub snr_db: f64,
    pub per_user_rates: Vec<f64>,
    pub sum_rate: f64,
    pub hybrid_residual: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub gp_iterations: Option<usize>,
    /// Smallest `|a(phi)^H f_k|` over every receiver's grid around its
    /// estimated AoD, for the final precoder.
    pub min_grid_gain: Option<f64>,
    pub status: String,
    /// Expected-response backend, for ES schemes only.
    pub es_backend: Option<ExpectedResponseBackend>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

/// Channels and combiners of one trial.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub channels: Vec<ChannelRealization>,
    pub combiners: Vec<CVector>,
}

impl Scenario {
    pub fn est_aods_deg(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.est_aod_deg).collect()
    }
}

/// Per-run state shared by all trials.
struct Prepared<'a> {
    cfg: &'a SystemConfig,
    bs: ArrayGeometry,
    ru: ArrayGeometry,
    model: MisalignmentModel,
    /// Path angles per receiver when the geometry is pinned.
    pinned: Option<Vec<Vec<(f64, f64)>>>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Channel draws for trial `t` use stream `2t`, analog initializations `2t+1`.
fn channel_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    stream_rng(seed, 2 * trial)
}

fn init_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    stream_rng(seed, 2 * trial + 1)
}

fn separated(aods: &[f64], min_sep: f64) -> bool {
    aods.iter()
        .enumerate()
        .all(|(i, a)| aods[i + 1..].iter().all(|b| (a - b).abs() > min_sep))
}

/// Interval of `cos(phi)` over `[aod - half_width, aod + half_width]`.
fn spatial_interval(aod_deg: f64, half_width_deg: f64) -> (f64, f64) {
    let lo = (aod_deg + half_width_deg).clamp(0.0, 180.0).to_radians().cos();
    let hi = (aod_deg - half_width_deg).clamp(0.0, 180.0).to_radians().cos();
    (lo, hi)
}

/// Gap between two spatial-frequency intervals on the circle of the given
/// period (the array response is periodic in `cos(phi)` with period
/// `lambda / d`).
fn wrapped_gap(a: (f64, f64), b: (f64, f64), period: f64) -> f64 {
    [-period, 0.0, period]
        .iter()
        .map(|s| (b.0 + s - a.1).max(a.0 - (b.1 + s)))
        .fold(f64::INFINITY, f64::min)
}

fn spatially_separated(aods: &[f64], half_width_deg: f64, gap: f64, period: f64) -> bool {
    if gap <= 0.0 {
        return true;
    }
    let iv: Vec<(f64, f64)> = aods.iter().map(|&a| spatial_interval(a, half_width_deg)).collect();
    iv.iter()
        .enumerate()
        .all(|(i, &a)| iv[i + 1..].iter().all(|&b| wrapped_gap(a, b, period) > gap))
}

impl<'a> Prepared<'a> {
    fn new(cfg: &'a SystemConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(s) = cfg.schemes.iter().find(|s| s.analog == AnalogSolver::ManifoldOptimization) {
            return Err(Error::Unsupported(format!(
                "scheme {s}: the manifold-optimization solver is only available as a flop estimate"
            )));
        }
        let bs = ArrayGeometry::half_wavelength(cfg.bs_antennas)?;
        let ru = ArrayGeometry::half_wavelength(cfg.ru_antennas)?;
        let model = MisalignmentModel::uncapped(cfg.delta_deg)?;
        let mut prepared = Self {
            cfg,
            bs,
            ru,
            model,
            pinned: None,
        };
        if cfg.fixed_geometry {
            prepared.pinned = Some(prepared.pin_geometry()?);
        }
        Ok(prepared)
    }

    /// Path angles shared by every trial. Receivers' AoDs are kept far enough
    /// apart that any misalignment draw still satisfies the separation rule.
    fn pin_geometry(&self) -> Result<Vec<Vec<(f64, f64)>>> {
        let mut rng = stream_rng(self.cfg.seed, u64::MAX);
        let gap = self.cfg.min_separation() + 2.0 * self.model.half_width_deg;
        for _ in 0..=self.cfg.max_redraws {
            let angles: Vec<Vec<(f64, f64)>> = (0..self.cfg.receivers)
                .map(|_| {
                    (0..self.cfg.paths)
                        .map(|_| (rng.random_range(0.0..=180.0), rng.random_range(0.0..=180.0)))
                        .collect()
                })
                .collect();
            let ok = (0..angles.len()).all(|i| {
                (i + 1..angles.len())
                    .all(|j| angles[i].iter().all(|a| angles[j].iter().all(|b| (a.0 - b.0).abs() > gap)))
            });
            if ok {
                return Ok(angles);
            }
        }
        Err(Error::InfeasibleGeometry(format!(
            "could not pin {} receivers {gap:.2} deg apart",
            self.cfg.receivers
        )))
    }

    fn draw_channel(&self, pinned: Option<&[(f64, f64)]>, rng: &mut ChaCha8Rng) -> Result<ChannelRealization> {
        let cfg = self.cfg;
        let Some(angles) = pinned else {
            return generate_channel(&self.bs, &self.ru, cfg.paths, cfg.gain_variance, &self.model, rng);
        };
        let sd = (cfg.gain_variance / 2.0).sqrt();
        let paths: Vec<PathParams> = angles
            .iter()
            .map(|&(aod, aoa)| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                PathParams {
                    complex_gain: C64::new(re, im) * sd,
                    aod_deg: aod,
                    aoa_deg: aoa,
                }
            })
            .collect();
        let mut ch = ChannelRealization::from_paths(&self.bs, &self.ru, paths, 0.0, 0.0)?;
        ch.est_aod_deg = ch.true_aod_deg() - sample_misalignment(&self.model, rng);
        ch.est_aoa_deg = ch.true_aoa_deg() - sample_misalignment(&self.model, rng);
        Ok(ch)
    }

    /// Draw all receivers' channels, redrawing until the estimated AoDs are
    /// pairwise more than the minimum separation apart.
    fn scenario(&self, trial: u64) -> Result<Scenario> {
        let mut rng = channel_rng(self.cfg.seed, trial);
        let min_sep = self.cfg.min_separation();
        for _ in 0..=self.cfg.max_redraws {
            let channels = (0..self.cfg.receivers)
                .map(|k| self.draw_channel(self.pinned.as_ref().map(|p| p[k].as_slice()), &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let aods: Vec<f64> = channels.iter().map(|c| c.est_aod_deg).collect();
            if separated(&aods, min_sep)
                && spatially_separated(
                    &aods,
                    self.model.half_width_deg,
                    self.cfg.min_spatial_gap(),
                    1.0 / self.bs.spacing_ratio,
                )
            {
                let combiners = channels
                    .iter()
                    .map(|c| receive_combiner(c, &self.ru))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(Scenario { channels, combiners });
            }
        }
        Err(Error::InfeasibleGeometry(format!(
            "no draw with estimated AoDs {min_sep:.3} deg apart after {} attempts",
            self.cfg.max_redraws + 1
        )))
    }

    fn grids(&self, aods: &[f64]) -> Result<Vec<AngleGrid>> {
        aods.iter()
            .map(|&a| AngleGrid::new(a, self.model.half_width_deg, self.cfg.grid_samples))
            .collect()
    }

    fn hybrid_options(&self) -> HybridOptions {
        HybridOptions {
            tol: self.cfg.hybrid_tol,
            max_iter: self.cfg.hybrid_max_iter,
            gp_tol: self.cfg.gp_tol,
            gp_max_iter: self.cfg.gp_max_iter,
        }
    }
}

/// Fully-digital target for `scheme` at the estimated AoDs. For DP-FM the
/// min-max error trace is returned as well.
fn digital_target(
    prep: &Prepared,
    scheme: DigitalScheme,
    aods: &[f64],
) -> Result<(CMatrix, Option<Vec<f64>>)> {
    let cfg = prep.cfg;
    match scheme {
        DigitalScheme::Conventional => Ok((conventional_dp(aods, &prep.bs)?.matrix, None)),
        DigitalScheme::ErrorStatistics => {
            let beta = prep.model.half_width_rad();
            let responses = aods
                .iter()
                .map(|&a| {
                    let params = ExpectedResponseParams::new(a, beta, cfg.bs_antennas)?;
                    expected_array_response_with(&params, cfg.es_backend)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((es_precoder(&responses)?.matrix, None))
        }
        DigitalScheme::FlatMainlobe => {
            let out = fm_precoder(&prep.grids(aods)?, &prep.bs, cfg.fm_tol, cfg.fm_max_iter)?;
            Ok((out.precoder.matrix, Some(out.epsilons)))
        }
    }
}

/// Composite precoders for the configured second-stage mode.
fn composites(
    prep: &Prepared,
    scenario: &Scenario,
    hybrid: &HybridPrecoder,
    scheme: &SchemeSpec,
) -> Vec<(String, Result<CompositePrecoder>)> {
    let tag = scheme.tag();
    let with_bd = || -> Result<CompositePrecoder> {
        let eff = effective_channels(&scenario.channels, &scenario.combiners, hybrid)?;
        compose_hybrid(hybrid, &bd_precoder(&eff)?, tag.clone())
    };
    let no_bd_tag = format!("{tag}{NO_BD_SUFFIX}");
    let without_bd = || compose_without_bd(hybrid, no_bd_tag.clone());
    match prep.cfg.bd {
        BdMode::On => vec![(tag.clone(), with_bd())],
        BdMode::Off => vec![(no_bd_tag.clone(), without_bd())],
        BdMode::Both => vec![(tag.clone(), with_bd()), (no_bd_tag.clone(), without_bd())],
    }
}

fn variant_tags(prep: &Prepared, scheme: &SchemeSpec) -> Vec<String> {
    let tag = scheme.tag();
    match prep.cfg.bd {
        BdMode::On => vec![tag],
        BdMode::Off => vec![format!("{tag}{NO_BD_SUFFIX}")],
        BdMode::Both => vec![tag.clone(), format!("{tag}{NO_BD_SUFFIX}")],
    }
}

fn failed_records(prep: &Prepared, trial: u64, scheme: &SchemeSpec, tag: &str, err: &Error) -> Vec<TrialRecord> {
    prep.cfg
        .snr_db_grid
        .iter()
        .map(|&snr| TrialRecord {
            trial_id: trial,
            scheme: tag.to_string(),
            snr_db: snr,
            per_user_rates: Vec::new(),
            sum_rate: 0.0,
            hybrid_residual: None,
            outer_iterations: None,
            gp_iterations: None,
            min_grid_gain: None,
            status: err.to_string(),
            es_backend: backend_for(prep, scheme),
        })
        .collect()
}

fn backend_for(prep: &Prepared, scheme: &SchemeSpec) -> Option<ExpectedResponseBackend> {
    (scheme.digital == DigitalScheme::ErrorStatistics).then_some(prep.cfg.es_backend)
}

fn run_trial_prepared(prep: &Prepared, trial: u64) -> Vec<TrialRecord> {
    let cfg = prep.cfg;
    let scenario = match prep.scenario(trial) {
        Ok(s) => s,
        Err(e) => {
            return cfg
                .schemes
                .iter()
                .flat_map(|s| {
                    variant_tags(prep, s)
                        .into_iter()
                        .flat_map(|tag| failed_records(prep, trial, s, &tag, &e))
                        .collect::<Vec<_>>()
                })
                .collect();
        }
    };
    let aods = scenario.est_aods_deg();
    let grids = prep.grids(&aods).ok();
    let mut targets: Vec<(DigitalScheme, std::result::Result<CMatrix, String>)> = Vec::new();
    let mut out = Vec::new();
    for scheme in &cfg.schemes {
        let target = match targets.iter().find(|(d, _)| *d == scheme.digital) {
            Some((_, t)) => t.clone(),
            None => {
                let t = digital_target(prep, scheme.digital, &aods)
                    .map(|(m, _)| m)
                    .map_err(|e| e.to_string());
                targets.push((scheme.digital, t.clone()));
                t
            }
        };
        let hybrid = target.map_err(Error::InfeasibleGeometry).and_then(|t| {
            approximate_hybrid(
                &t,
                cfg.rf_chains,
                scheme.analog,
                &prep.hybrid_options(),
                &mut init_rng(cfg.seed, trial),
            )
        });
        let hybrid = match hybrid {
            Ok(h) => h,
            Err(e) => {
                for tag in variant_tags(prep, scheme) {
                    out.extend(failed_records(prep, trial, scheme, &tag, &e));
                }
                continue;
            }
        };
        for (tag, composite) in composites(prep, &scenario, &hybrid, scheme) {
            let composite = match composite {
                Ok(c) => c,
                Err(e) => {
                    out.extend(failed_records(prep, trial, scheme, &tag, &e));
                    continue;
                }
            };
            let min_gain = grids.as_ref().map(|grids| {
                grids
                    .iter()
                    .enumerate()
                    .map(|(k, g)| min_grid_gain(&composite.matrix.column(k).into_owned(), g, &prep.bs))
                    .fold(f64::INFINITY, f64::min)
            });
            for &snr in &cfg.snr_db_grid {
                let record = match rate_report(&scenario.channels, &scenario.combiners, &composite, snr) {
                    Ok(r) => TrialRecord {
                        trial_id: trial,
                        scheme: tag.clone(),
                        snr_db: snr,
                        sum_rate: r.sum_bps_hz,
                        per_user_rates: r.per_user_bps_hz,
                        hybrid_residual: Some(hybrid.residual),
                        outer_iterations: Some(hybrid.iterations_used),
                        gp_iterations: Some(hybrid.gp_iterations),
                        min_grid_gain: min_gain,
                        status: STATUS_OK.to_string(),
                        es_backend: backend_for(prep, scheme),
                    },
                    Err(e) => failed_records(prep, trial, scheme, &tag, &e).swap_remove(0),
                };
                out.push(record);
            }
        }
    }
    out
}

/// Records of a single trial; `run_experiment` is the parallel union of these.
pub fn run_trial(cfg: &SystemConfig, trial_id: u64) -> Result<Vec<TrialRecord>> {
    let prep = Prepared::new(cfg)?;
    Ok(run_trial_prepared(&prep, trial_id))
}

/// Run every trial in parallel. Each trial owns random streams derived from
/// `(seed, trial_id)`, so the output does not depend on scheduling; records
/// come back ordered by trial, then configured scheme, then SNR.
pub fn run_experiment(cfg: &SystemConfig) -> Result<Vec<TrialRecord>> {
    let prep = Prepared::new(cfg)?;
    let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial_prepared(&prep, t))
        .collect();
    Ok(per_trial.into_iter().flatten().collect())
}

/// Scenario of trial `trial_id` (after separation redraws).
pub fn draw_scenario(cfg: &SystemConfig, trial_id: u64) -> Result<Scenario> {
    Prepared::new(cfg)?.scenario(trial_id)
}

/// Mean and standard error of `sum_rate(a) - sum_rate(b)` over trials where
/// both schemes succeeded at `snr_db`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDifference {
    pub mean: f64,
    pub std_error: f64,
    pub pairs: usize,
}

pub fn paired_difference(records: &[TrialRecord], a: &str, b: &str, snr_db: f64) -> PairedDifference {
    use std::collections::BTreeMap;
    let pick = |tag: &str| -> BTreeMap<u64, f64> {
        records
            .iter()
            .filter(|r| r.scheme == tag && r.snr_db == snr_db && r.is_ok())
            .map(|r| (r.trial_id, r.sum_rate))
            .collect()
    };
    let (ra, rb) = (pick(a), pick(b));
    let diffs: Vec<f64> = ra.iter().filter_map(|(t, x)| rb.get(t).map(|y| x - y)).collect();
    let n = diffs.len();
    if n == 0 {
        return PairedDifference {
            mean: f64::NAN,
            std_error: f64::NAN,
            pairs: 0,
        };
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    PairedDifference {
        mean,
        std_error: (var / n as f64).sqrt(),
        pairs: n,
    }
}

/// One sample of a beampattern file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeampatternRow {
    pub receiver: usize,
    pub angle_deg: f64,
    pub gain: f64,
}

/// Beampattern of each receiver's precoder column over `[0, 180]` degrees.
///
/// `scheme` is either a digital scheme (`CDP`, `FM`, `ES`), giving the
/// fully-digital column, or a full scheme tag such as `FM-GP`, giving the
/// composite hybrid column under the configured second-stage mode (`both`
/// counts as with). Receivers sit at trial 0's estimated AoDs unless
/// `beampattern_aods_deg` pins them; pinned receivers get single-path,
/// unit-gain broadside-arrival channels with no misalignment.
pub fn beampattern_rows(cfg: &SystemConfig, scheme: &str, angle_step_deg: f64) -> Result<Vec<BeampatternRow>> {
    if !(angle_step_deg > 0.0 && angle_step_deg <= 180.0) {
        return Err(Error::InvalidParameter(format!("angle step {angle_step_deg} must be in (0, 180]")));
    }
    let mut cfg = cfg.clone();
    let hybrid_scheme = scheme.parse::<SchemeSpec>().ok();
    let digital = match hybrid_scheme {
        Some(s) => s.digital,
        None => parse_digital(scheme)?,
    };
    if let Some(s) = hybrid_scheme {
        cfg.schemes = vec![s];
    }
    let prep = Prepared::new(&cfg)?;
    let scenario = match &cfg.beampattern_aods_deg {
        Some(aods) => {
            let channels = aods
                .iter()
                .map(|&a| {
                    let path = PathParams {
                        complex_gain: C64::new(1.0, 0.0),
                        aod_deg: a.clamp(0.0, 180.0),
                        aoa_deg: 90.0,
                    };
                    let mut ch = ChannelRealization::from_paths(&prep.bs, &prep.ru, vec![path], a, 90.0)?;
                    ch.est_aod_deg = a;
                    Ok(ch)
                })
                .collect::<Result<Vec<_>>>()?;
            let combiners = channels
                .iter()
                .map(|c| receive_combiner(c, &prep.ru))
                .collect::<Result<Vec<_>>>()?;
            Scenario { channels, combiners }
        }
        None => prep.scenario(0)?,
    };
    let aods = scenario.est_aods_deg();
    let (target, _) = digital_target(&prep, digital, &aods)?;
    let precoder = match hybrid_scheme {
        None => target,
        Some(s) => {
            let hybrid = approximate_hybrid(
                &target,
                cfg.rf_chains,
                s.analog,
                &prep.hybrid_options(),
                &mut init_rng(cfg.seed, 0),
            )?;
            let (_, composite) = composites(&prep, &scenario, &hybrid, &s).swap_remove(0);
            composite?.matrix
        }
    };
    let steps = (180.0 / angle_step_deg + 1e-9).floor() as usize;
    let angles: Vec<f64> = (0..=steps).map(|i| i as f64 * angle_step_deg).collect();
    let mut rows = Vec::with_capacity(aods.len() * angles.len());
    for k in 0..aods.len() {
        let bp = beampattern(&precoder.column(k).into_owned(), &angles, &prep.bs);
        rows.extend(bp.angles_deg.iter().zip(&bp.gains).map(|(&angle_deg, &gain)| BeampatternRow {
            receiver: k + 1,
            angle_deg,
            gain,
        }));
    }
    Ok(rows)
}

/// One point of a convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub scheme: String,
    /// `fm` (flat-mainlobe alternation), `gp` (analog step with a fixed
    /// baseband) or `outer` (hybrid alternation residual).
    pub trace: String,
    pub iteration: usize,
    pub value: f64,
}

/// Convergence traces on trial 0's scenario for every configured scheme.
pub fn convergence_traces(cfg: &SystemConfig) -> Result<Vec<TraceRow>> {
    let prep = Prepared::new(cfg)?;
    let scenario = prep.scenario(0)?;
    let aods = scenario.est_aods_deg();
    let mut rows = Vec::new();
    let mut push = |scheme: &str, trace: &str, values: &[f64]| {
        rows.extend(values.iter().enumerate().map(|(i, &value)| TraceRow {
            scheme: scheme.to_string(),
            trace: trace.to_string(),
            iteration: i,
            value,
        }));
    };
    let mut done_digital = Vec::new();
    for scheme in &cfg.schemes {
        let (target, fm_trace) = digital_target(&prep, scheme.digital, &aods)?;
        if !done_digital.contains(&scheme.digital) {
            done_digital.push(scheme.digital);
            if let Some(eps) = fm_trace {
                push(scheme.digital.tag(), "fm", &eps);
            }
        }
        let tag = scheme.tag();
        if scheme.analog == AnalogSolver::GradientProjection {
            let mut rng = init_rng(cfg.seed, 0);
            let analog = random_phase_analog(cfg.bs_antennas, cfg.rf_chains, &mut rng);
            let problem = CmlsProblem::new(digital_ls_step(&analog, &target)?, target.clone())?;
            let start = CVector::from_column_slice(analog.as_slice());
            let gp = gp_analog_step(&problem, &start, cfg.gp_tol, cfg.gp_max_iter)?;
            push(&tag, "gp", &gp.history);
        }
        let hybrid = approximate_hybrid(
            &target,
            cfg.rf_chains,
            scheme.analog,
            &prep.hybrid_options(),
            &mut init_rng(cfg.seed, 0),
        )?;
        push(&tag, "outer", &hybrid.residual_history);
    }
    Ok(rows)
}
