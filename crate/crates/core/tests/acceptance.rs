//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the report is printed even when everything passes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hybrid_precoding::digital::{conventional_dp, es_precoder, fm_precoder, AngleGrid};
use hybrid_precoding::error_stats::{
    expected_array_response_with, expected_element, quadrature_expected_element, ExpectedResponseBackend,
    ExpectedResponseParams, DEFAULT_QUADRATURE_NODES,
};
use hybrid_precoding::geometry::{steering_vector, ArrayGeometry};
use hybrid_precoding::hybrid::{
    approximate_hybrid, digital_ls_step, gp_analog_step, random_phase_analog, AnalogSolver, CmlsProblem,
    HybridOptions,
};
use hybrid_precoding::interference::{bd_precoder, compose_hybrid, effective_channels, effective_rows};
use hybrid_precoding::linalg::{CMatrix, CVector, C64};
use hybrid_precoding::metrics::{flops_gp, flops_lsp, TABLE_MAX_ITERS};
use hybrid_precoding::sim::{draw_scenario, paired_difference, run_experiment, BdMode, SystemConfig, NO_BD_SUFFIX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) / 2f64.sqrt()
    })
}

fn desk_config() -> SystemConfig {
    SystemConfig {
        bs_antennas: 64,
        ru_antennas: 16,
        rf_chains: 8,
        receivers: 4,
        delta_deg: 1.154,
        seed: 2024,
        ..SystemConfig::default()
    }
}

fn constant_modulus() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sizes = [16usize, 32, 64];
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let m_t = sizes[i % 3];
        let k = rng.random_range(1..=4);
        let solver = if i % 2 == 0 {
            AnalogSolver::GradientProjection
        } else {
            AnalogSolver::LeastSquaresProjection
        };
        // a single receiver leaves LSP no room beyond one RF chain
        let n_rf = if k == 1 && solver == AnalogSolver::LeastSquaresProjection {
            1
        } else {
            rng.random_range(k..=8)
        };
        let target = gaussian_matrix(m_t, k, &mut rng);
        let h = approximate_hybrid(&target, n_rf, solver, &HybridOptions::default(), &mut rng).unwrap();
        let modulus = 1.0 / (m_t as f64).sqrt();
        for z in h.analog.iter() {
            worst = worst.max((z.norm() - modulus).abs());
        }
    }
    outcome(worst <= 1e-10, format!("1000 factorizations, worst |entry| deviation {worst:.2e}"))
}

/// Largest off-diagonal `|g_jk| / |g_kk|` of a square gain matrix.
fn leakage(gains: &CMatrix) -> f64 {
    let k = gains.ncols();
    let mut worst = 0.0f64;
    for c in 0..k {
        let diag = gains[(c, c)].norm();
        for r in (0..k).filter(|&r| r != c) {
            worst = worst.max(gains[(r, c)].norm() / diag);
        }
    }
    worst
}

fn zero_forcing() -> Outcome {
    let cfg = desk_config();
    let bs = ArrayGeometry::half_wavelength(cfg.bs_antennas).unwrap();
    let beta = cfg.half_width_deg().to_radians();
    let mut worst = [0.0f64; 3];
    for t in 0..100 {
        let scenario = draw_scenario(&cfg, t).unwrap();
        let aods = scenario.est_aods_deg();

        let steering: Vec<CVector> = aods.iter().map(|&a| steering_vector(a, &bs).unwrap()).collect();
        let cdp = conventional_dp(&aods, &bs).unwrap().matrix;
        let rows = CMatrix::from_fn(aods.len(), aods.len(), |r, c| steering[r].dotc(&cdp.column(c)));
        worst[0] = worst[0].max(leakage(&rows));

        let expected: Vec<CVector> = aods
            .iter()
            .map(|&a| {
                let p = ExpectedResponseParams::new(a, beta, cfg.bs_antennas).unwrap();
                expected_array_response_with(&p, ExpectedResponseBackend::Series).unwrap()
            })
            .collect();
        let es = es_precoder(&expected).unwrap().matrix;
        let rows = CMatrix::from_fn(aods.len(), aods.len(), |r, c| expected[r].dotc(&es.column(c)));
        worst[1] = worst[1].max(leakage(&rows));

        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let hybrid =
            approximate_hybrid(&es, cfg.rf_chains, AnalogSolver::GradientProjection, &HybridOptions::default(), &mut rng)
                .unwrap();
        let eff = effective_channels(&scenario.channels, &scenario.combiners, &hybrid).unwrap();
        let composite = compose_hybrid(&hybrid, &bd_precoder(&eff).unwrap(), "ES-GP").unwrap();
        let rows = effective_rows(&scenario.channels, &scenario.combiners, &composite.matrix).unwrap();
        worst[2] = worst[2].max(leakage(&rows));
    }
    outcome(
        worst.iter().all(|&w| w <= 1e-8),
        format!(
            "100 instances, worst relative leakage CDP {:.1e}, DP-ES {:.1e}, F_HP {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

/// Published complexity table: (M_t, N_RF, K, GP, LSP).
const COMPLEXITY_TABLE: [(u32, u32, u32, f64, f64); 12] = [
    (128, 6, 4, 2.76e8, 3.94e5),
    (160, 6, 4, 4.31e8, 6.15e5),
    (192, 6, 4, 6.20e8, 8.86e5),
    (256, 6, 4, 1.10e9, 1.57e6),
    (128, 12, 4, 5.52e8, 7.88e5),
    (160, 12, 4, 7.39e8, 1.23e6),
    (192, 12, 4, 1.24e9, 1.77e6),
    (256, 12, 4, 2.20e9, 3.15e6),
    (128, 12, 8, 1.10e9, 1.57e6),
    (160, 12, 8, 1.72e9, 2.46e6),
    (192, 12, 8, 2.48e9, 3.54e6),
    (256, 12, 8, 4.40e9, 6.29e6),
];

/// The printed GP cell at (160, 12, 4) breaks the table's own M_t scaling;
/// the formula gives 8.62e8 and that value is checked instead.
const MISPRINTED_GP_CELL: (u32, u32, u32, f64) = (160, 12, 4, 8.62e8);

/// Within one unit of the third significant figure of `printed` (the table
/// mixes rounding and truncation).
fn three_figures(value: f64, printed: f64) -> bool {
    let unit = 10f64.powf(printed.abs().log10().floor() - 2.0);
    (value - printed).abs() <= unit * (1.0 + 1e-9)
}

fn complexity_table() -> Outcome {
    let mut misses = Vec::new();
    let mut checked = 0;
    for (m, n, k, gp, lsp) in COMPLEXITY_TABLE {
        let gp_ref = if (m, n, k) == (MISPRINTED_GP_CELL.0, MISPRINTED_GP_CELL.1, MISPRINTED_GP_CELL.2) {
            MISPRINTED_GP_CELL.3
        } else {
            gp
        };
        for (name, value, printed) in [
            ("GP", flops_gp(m, n, k, TABLE_MAX_ITERS), gp_ref),
            ("LSP", flops_lsp(m, n, k), lsp),
        ] {
            checked += 1;
            if !three_figures(value, printed) {
                misses.push(format!("{name}({m},{n},{k}) = {value:.4e} vs {printed:.2e}"));
            }
        }
    }
    let spot = flops_lsp(128, 6, 4) == 393_984.0 && three_figures(flops_gp(256, 12, 8, TABLE_MAX_ITERS), 4.40e9);
    outcome(
        misses.is_empty() && spot,
        if misses.is_empty() {
            format!("{checked} cells within 3 significant figures (GP(160,12,4) checked against 8.62e8)")
        } else {
            misses.join("; ")
        },
    )
}

fn expected_response_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for theta in [30.0f64, 60.0, 90.0, 120.0] {
        for beta_deg in [0.5f64, 1.0, 2.0] {
            let beta = beta_deg.to_radians();
            let params = ExpectedResponseParams::new(theta, beta, 512).unwrap();
            for m in 1..=512 {
                let b = std::f64::consts::PI * (m - 1) as f64 * theta.to_radians().sin();
                if b * beta > 0.5 {
                    break;
                }
                let series = expected_element(m, &params);
                let quad = quadrature_expected_element(m, &params, DEFAULT_QUADRATURE_NODES).unwrap();
                worst = worst.max((series - quad).norm() / quad.norm());
                compared += 1;
            }
        }
    }
    let mut exact = true;
    for theta in [30.0, 60.0, 90.0, 120.0] {
        let bs = ArrayGeometry::half_wavelength(64).unwrap();
        let params = ExpectedResponseParams::new(theta, 0.0, 64).unwrap();
        let series = expected_array_response_with(&params, ExpectedResponseBackend::Series).unwrap();
        let quad = expected_array_response_with(&params, ExpectedResponseBackend::Quadrature).unwrap();
        let steer = steering_vector(theta, &bs).unwrap();
        exact &= (&series - &steer).camax() <= 1e-15 && (&quad - &steer).camax() <= 1e-15;
    }
    outcome(
        worst <= 1e-3 && exact,
        format!("{compared} elements, worst relative error {worst:.2e}; zero width matches steering vector: {exact}"),
    )
}

/// Exhaustive phase search; the objective separates per entry when
/// `N_RF = K = 1`.
fn phase_grid_optimum(target: &CVector, b: C64, modulus: f64, points: usize) -> f64 {
    target
        .iter()
        .map(|&f| {
            (0..points)
                .map(|i| {
                    let phase = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
                    (f - C64::from_polar(modulus, phase) * b).norm_sqr()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn gp_toy_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let target = gaussian_matrix(2, 1, &mut rng);
        let analog = random_phase_analog(2, 1, &mut rng);
        let baseband = digital_ls_step(&analog, &target).unwrap();
        let b = baseband[(0, 0)];
        let problem = CmlsProblem::new(baseband, target.clone()).unwrap();
        let start = CVector::from_column_slice(analog.as_slice());
        let gp = gp_analog_step(&problem, &start, 1e-15, 1000).unwrap();
        let grid = phase_grid_optimum(&target.column(0).into_owned(), b, problem.modulus(), 10_000);
        worst = worst.max((gp.objective - grid).abs());
    }
    outcome(worst <= 1e-6, format!("50 targets, worst |GP - grid optimum| {worst:.2e}"))
}

fn convergence_shape() -> Outcome {
    let cfg = desk_config();
    let bs = ArrayGeometry::half_wavelength(cfg.bs_antennas).unwrap();
    let beta_deg = cfg.half_width_deg();
    let options = HybridOptions::default();
    let (mut inner_ok, mut outer_ok) = (0, 0);
    let mut outer_iters = Vec::new();
    for t in 0..100 {
        let aods = draw_scenario(&cfg, t).unwrap().est_aods_deg();
        // alternate the two robust targets
        let target = if t % 2 == 0 {
            let responses: Vec<CVector> = aods
                .iter()
                .map(|&a| {
                    let p = ExpectedResponseParams::new(a, beta_deg.to_radians(), cfg.bs_antennas).unwrap();
                    expected_array_response_with(&p, ExpectedResponseBackend::Quadrature).unwrap()
                })
                .collect();
            es_precoder(&responses).unwrap().matrix
        } else {
            let grids: Vec<AngleGrid> = aods
                .iter()
                .map(|&a| AngleGrid::new(a, beta_deg, cfg.grid_samples).unwrap())
                .collect();
            fm_precoder(&grids, &bs, cfg.fm_tol, cfg.fm_max_iter).unwrap().precoder.matrix
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
        let analog = random_phase_analog(cfg.bs_antennas, cfg.rf_chains, &mut rng);
        let problem = CmlsProblem::new(digital_ls_step(&analog, &target).unwrap(), target.clone()).unwrap();
        let start = CVector::from_column_slice(analog.as_slice());
        let h = gp_analog_step(&problem, &start, 0.0, 50).unwrap().history;
        if (1..h.len()).any(|i| (h[i] - h[i - 1]).abs() < 1e-4 * h[i - 1]) {
            inner_ok += 1;
        }

        let hybrid =
            approximate_hybrid(&target, cfg.rf_chains, AnalogSolver::GradientProjection, &options, &mut rng).unwrap();
        let r = &hybrid.residual_history;
        let settled = r.len() >= 2 && (r[r.len() - 1] - r[r.len() - 2]).abs() < options.tol;
        if settled && hybrid.iterations_used <= 15 {
            outer_ok += 1;
        }
        outer_iters.push(if settled { hybrid.iterations_used } else { usize::MAX });
    }
    outer_iters.sort_unstable();
    let show = |i: usize| match outer_iters[i] {
        usize::MAX => "not settled".to_string(),
        v => v.to_string(),
    };
    outcome(
        inner_ok >= 95 && outer_ok >= 95,
        format!(
            "GP inner settles within 50 on {inner_ok}/100; outer loop within 15 on {outer_ok}/100 \
             (median {}, 95th percentile {})",
            show(50),
            show(94)
        ),
    )
}

/// Robustness ordering at 0 dB and second-stage benefit at 10 dB share one run.
fn robustness_and_bd() -> (Outcome, Outcome) {
    let cfg = SystemConfig {
        trials: 200,
        snr_db_grid: vec![0.0, 10.0],
        bd: BdMode::Both,
        es_backend: ExpectedResponseBackend::Quadrature,
        ..desk_config()
    };
    let records = run_experiment(&cfg).unwrap();
    let failed = records.iter().filter(|r| !r.is_ok()).count();

    let mut pass7 = failed == 0;
    let mut lines = Vec::new();
    for robust in ["FM-GP", "ES-GP"] {
        let d = paired_difference(&records, robust, "CDP-GP", 0.0);
        pass7 &= d.mean > 2.0 * d.std_error;
        lines.push(format!("{robust}-CDP-GP {:+.3} (se {:.3})", d.mean, d.std_error));
    }
    for (gp, lsp) in [("FM-GP", "FM-LSP"), ("ES-GP", "ES-LSP")] {
        let d = paired_difference(&records, gp, lsp, 0.0);
        pass7 &= d.mean >= 0.0;
        lines.push(format!("{gp}-{lsp} {:+.3}", d.mean));
    }

    let mut pass8 = failed == 0;
    let mut bd_lines = Vec::new();
    for scheme in ["CDP-GP", "FM-GP", "ES-GP", "CDP-LSP", "FM-LSP", "ES-LSP"] {
        let d = paired_difference(&records, scheme, &format!("{scheme}{NO_BD_SUFFIX}"), 10.0);
        pass8 &= d.mean > 2.0 * d.std_error;
        bd_lines.push(format!("{scheme} {:+.2} (se {:.2})", d.mean, d.std_error));
    }
    (
        outcome(pass7, format!("200 trials, {failed} failed records; {}", lines.join(", "))),
        outcome(pass8, format!("BD minus no-BD at 10 dB: {}", bd_lines.join(", "))),
    )
}

fn monotone_flat_mainlobe() -> Outcome {
    let bs = ArrayGeometry::half_wavelength(32).unwrap();
    let beta = 3f64.sqrt() * 1.154;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_rise = 0.0f64;
    let mut instances = 0;
    while instances < 50 {
        let a: f64 = rng.random_range(10.0..170.0);
        let b: f64 = rng.random_range(10.0..170.0);
        if (a - b).abs() <= 2.0 * beta + 1.0 {
            continue;
        }
        let grids = [AngleGrid::new(a, beta, 4).unwrap(), AngleGrid::new(b, beta, 4).unwrap()];
        let eps = fm_precoder(&grids, &bs, 1e-4, 50).unwrap().epsilons;
        for w in eps.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        instances += 1;
    }
    outcome(worst_rise <= 1e-12, format!("50 instances, largest increase {worst_rise:.2e}"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (m_t, n_rf, k) = (16, 4, 2);
        let problem = CmlsProblem::new(gaussian_matrix(n_rf, k, &mut rng), gaussian_matrix(m_t, k, &mut rng)).unwrap();
        let x = CVector::from_column_slice(gaussian_matrix(m_t * n_rf, 1, &mut rng).as_slice());
        let g = problem.gradient(&x);
        let h = 1e-6;
        let fd = CVector::from_fn(x.len(), |i, _| {
            let probe = |delta: C64| {
                let mut xp = x.clone();
                xp[i] += delta;
                let mut xm = x.clone();
                xm[i] -= delta;
                (problem.objective(&xp) - problem.objective(&xm)) / (2.0 * h)
            };
            C64::new(probe(C64::new(h, 0.0)), probe(C64::new(0.0, h)))
        });
        worst = worst.max((&g - &fd).norm() / g.norm());
    }
    outcome(worst <= 1e-5, format!("10 points, worst relative error {worst:.2e}"))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, run: &mut dyn FnMut() -> Vec<Outcome>| {
        let start = Instant::now();
        let results = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                vec![outcome(false, format!("panicked: {msg}"))]
            }
        };
        let secs = start.elapsed().as_secs_f64();
        for (i, r) in results.iter().enumerate() {
            let label = if results.len() > 1 {
                format!("{name} [{}]", i + 1)
            } else {
                name.to_string()
            };
            if !r.pass {
                failures += 1;
            }
            println!(
                "criterion {id:>2} {label}: {} ({}; {secs:.1}s)",
                if r.pass { "PASS" } else { "FAIL" },
                r.detail
            );
        }
    };
    report(1, "constant modulus", &mut || vec![constant_modulus()]);
    report(2, "zero forcing", &mut || vec![zero_forcing()]);
    report(3, "complexity table", &mut || vec![complexity_table()]);
    report(4, "expected response oracle", &mut || vec![expected_response_oracle()]);
    report(5, "GP toy optimality", &mut || vec![gp_toy_optimality()]);
    report(6, "convergence shape", &mut || vec![convergence_shape()]);
    let mut bd = None;
    report(7, "robustness ordering", &mut || {
        let (c7, c8) = robustness_and_bd();
        bd = Some(c8);
        vec![c7]
    });
    report(8, "BD benefit", &mut || {
        vec![bd.take().unwrap_or_else(|| outcome(false, "shared run did not complete"))]
    });
    report(9, "monotone flat-mainlobe objective", &mut || vec![monotone_flat_mainlobe()]);
    report(10, "gradient check", &mut || vec![gradient_check()]);
    println!("acceptance: {} failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
