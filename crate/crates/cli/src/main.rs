use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hybrid_precoding::error_stats::ExpectedResponseBackend;
use hybrid_precoding::metrics::{flops_gp, flops_lsp, flops_mo, TABLE_LINE_SEARCH_ITERS, TABLE_MAX_ITERS};
use hybrid_precoding::sim::{self, BdMode, OutputFormat, SchemeSpec, SystemConfig};

/// Monte-Carlo simulator for robust hybrid precoding under beam misalignment.
#[derive(Debug, Parser)]
#[command(name = "hpsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment and write per-trial records plus a summary.
    Simulate(SimulateArgs),
    /// Write per-receiver beampatterns over [0, 180] degrees.
    Beampattern(BeampatternArgs),
    /// Print closed-form flop estimates of the analog solvers.
    Flops(FlopsArgs),
    /// Write solver convergence traces for the first trial.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Series,
    Quadrature,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML file with SystemConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    snr_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_max: Option<f64>,
    #[arg(long)]
    snr_step: Option<f64>,
    /// Disable the block-diagonalization stage.
    #[arg(long)]
    no_bd: bool,
    /// Record both the block-diagonalized and the plain hybrid precoder.
    #[arg(long, conflicts_with = "no_bd")]
    both_bd: bool,
    #[arg(long, value_enum)]
    es_backend: Option<Backend>,
    /// Keep path angles fixed across trials (gains and misalignment still vary).
    #[arg(long)]
    fixed_geometry: bool,
    /// Misalignment standard deviation in degrees.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    bs_antennas: Option<usize>,
    #[arg(long)]
    ru_antennas: Option<usize>,
    #[arg(long)]
    rf_chains: Option<usize>,
    #[arg(long)]
    receivers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<SystemConfig> {
        let mut cfg = match &self.config {
            Some(path) => SystemConfig::load(path)?,
            None => SystemConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if self.snr_min.is_some() || self.snr_max.is_some() || self.snr_step.is_some() {
            let lo = cfg.snr_db_grid.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = cfg.snr_db_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = self.snr_min.unwrap_or(lo);
            let max = self.snr_max.unwrap_or(hi.max(min));
            cfg.snr_db_grid = SystemConfig::snr_range(min, max, self.snr_step.unwrap_or(5.0))?;
        }
        if self.no_bd {
            cfg.bd = BdMode::Off;
        }
        if self.both_bd {
            cfg.bd = BdMode::Both;
        }
        if let Some(b) = self.es_backend {
            cfg.es_backend = match b {
                Backend::Series => ExpectedResponseBackend::Series,
                Backend::Quadrature => ExpectedResponseBackend::Quadrature,
            };
        }
        if self.fixed_geometry {
            cfg.fixed_geometry = true;
        }
        if let Some(v) = self.delta {
            cfg.delta_deg = v;
        }
        if let Some(v) = self.bs_antennas {
            cfg.bs_antennas = v;
        }
        if let Some(v) = self.ru_antennas {
            cfg.ru_antennas = v;
        }
        if let Some(v) = self.rf_chains {
            cfg.rf_chains = v;
        }
        if let Some(v) = self.receivers {
            cfg.receivers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Scheme tag such as FM-GP or ES-LSP; repeatable.
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct BeampatternArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Digital scheme (CDP, FM, ES) or full tag (FM-GP) for the hybrid precoder.
    #[arg(long, default_value = "FM")]
    scheme: String,
    #[arg(long, default_value_t = 0.5)]
    angle_step: f64,
    /// Pin receivers' estimated AoDs (degrees) instead of drawing them.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    aods: Option<Vec<f64>>,
    #[arg(long, default_value = "beampattern.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    /// Omit to print the standard comparison grid.
    #[arg(long)]
    antennas: Option<u32>,
    #[arg(long, default_value_t = 8)]
    rf_chains: u32,
    #[arg(long, default_value_t = 4)]
    receivers: u32,
    #[arg(long, default_value_t = TABLE_LINE_SEARCH_ITERS)]
    line_search_iters: u32,
    #[arg(long, default_value_t = TABLE_MAX_ITERS)]
    max_iters: u32,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    #[arg(long, default_value = "convergence.csv")]
    out: PathBuf,
}

fn parse_schemes(tags: &[String]) -> Result<Option<Vec<SchemeSpec>>> {
    if tags.is_empty() {
        return Ok(None);
    }
    let specs = tags
        .iter()
        .map(|t| t.parse::<SchemeSpec>().with_context(|| format!("bad --scheme `{t}`")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(specs))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(s) = parse_schemes(&args.schemes)? {
        cfg.schemes = s;
    }
    let records = sim::run_experiment(&cfg)?;
    let format = match args.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    let summary = sim::emit_results(&records, format, &args.out)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    eprintln!(
        "{} records ({failed} failed) -> {}, summary -> {}",
        records.len(),
        args.out.display(),
        summary.display()
    );
    Ok(())
}

fn beampattern(args: &BeampatternArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(aods) = &args.aods {
        if aods.is_empty() {
            bail!("--aods needs at least one angle");
        }
        cfg.receivers = aods.len();
        cfg.rf_chains = cfg.rf_chains.max(aods.len());
        cfg.beampattern_aods_deg = Some(aods.clone());
    }
    let rows = sim::emit_beampattern(&cfg, &args.scheme, args.angle_step, &args.out)?;
    eprintln!("{rows} rows -> {}", args.out.display());
    Ok(())
}

fn flops(args: &FlopsArgs) {
    let (ls, it) = (args.line_search_iters, args.max_iters);
    println!("antennas,rf_chains,receivers,mo,gp,lsp");
    let row = |m: u32, n: u32, k: u32| {
        println!(
            "{m},{n},{k},{:.3e},{:.3e},{:.3e}",
            flops_mo(m, n, k, ls, it),
            flops_gp(m, n, k, it),
            flops_lsp(m, n, k)
        );
    };
    match args.antennas {
        Some(m) => row(m, args.rf_chains, args.receivers),
        None => {
            for (n, k) in [(6, 4), (12, 4), (12, 8)] {
                for m in [128, 160, 192, 256] {
                    row(m, n, k);
                }
            }
        }
    }
}

fn convergence(args: &ConvergenceArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(s) = parse_schemes(&args.schemes)? {
        cfg.schemes = s;
    }
    let rows = sim::convergence_traces(&cfg)?;
    sim::emit_traces(&rows, &args.out)?;
    eprintln!("{} trace points -> {}", rows.len(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(&a),
        Command::Beampattern(a) => beampattern(&a),
        Command::Flops(a) => {
            flops(&a);
            Ok(())
        }
        Command::Convergence(a) => convergence(&a),
    }
}
