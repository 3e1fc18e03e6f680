use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sq2lt::analytics::LtDerivatives;
use sq2lt::model::{validate_scenario, Family, ScenarioConfig};
use sq2lt::sim::{simulate_point, SimEstimate, SimOptions};

use crate::config::{self, parse_raw, read_config_text, BUNDLED};
use crate::error::CliError;
use crate::verify::{run_verify, VerifyOptions, DEFAULT_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "sq2lt",
    version,
    about = "Light-traffic analysis and simulation of power-of-d load balancing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form light-traffic derivatives and the quadratic approximation.
    Analyze(CommonArgs),
    /// Check the closed forms against identities, quadrature and Monte Carlo.
    Verify(VerifyArgs),
    /// Simulate one arrival rate.
    Simulate(SimulateArgs),
    /// Simulate every arrival rate of the grid.
    Sweep(CommonArgs),
    /// List the bundled scenario files.
    Scenarios(ScenariosArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Replace the job-size law by a unit-mean preset.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Replace the arrival-rate grid (comma separated).
    #[arg(long, value_name = "RATES", value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
    #[arg(long, value_name = "N")]
    pub busy_periods: Option<usize>,
    /// Worker threads; does not affect results.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write the artifact here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Monte-Carlo samples per tagged scenario.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_SAMPLES)]
    pub samples: u64,
    /// Relative tolerance for the quadrature checks.
    #[arg(long, value_name = "X")]
    pub tol: Option<f64>,
    /// Test hook: perturb one capacity in the closed forms only.
    #[arg(long, value_name = "INDEX", hide = true)]
    pub corrupt_capacity: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ScenariosArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Print the full text of one bundled scenario.
    #[arg(long, value_name = "NAME")]
    pub show: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Hyperexponential,
    Exponential,
    Weibull,
    Deterministic,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Hyperexponential => Family::Hyperexponential,
            FamilyArg::Exponential => Family::Exponential,
            FamilyArg::Weibull => Family::Weibull,
            FamilyArg::Deterministic => Family::Deterministic,
        }
    }
}

/// Load the scenario and apply command-line overrides, validating the result
/// with the same rules as the file itself.
pub fn load(args: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let text = read_config_text(&args.config)?;
    let mut raw = parse_raw(&text, &args.config.display().to_string())?;
    if let Some(seed) = args.seed {
        raw.seed = Some(seed);
    }
    if let Some(f) = args.family {
        raw.distribution = Family::from(f).unit_mean().into();
    }
    if let Some(grid) = &args.lambda {
        raw.lambda_grid = grid.clone();
    }
    if args.runs.is_some() {
        raw.runs = args.runs;
    }
    if args.busy_periods.is_some() {
        raw.busy_periods_per_run = args.busy_periods;
    }
    Ok(validate_scenario(raw)?)
}

fn write_artifact(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io("writing standard output", e))
        }
    }
}

/// `<stem>_approx.csv` next to `path`.
pub fn companion_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}_approx.csv"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Encode(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Encode(e.to_string()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ApproxRow {
    pub lambda: f64,
    pub r_app: f64,
}

#[derive(Debug, Serialize)]
struct AnalyzeOutput<'a> {
    derivatives: &'a LtDerivatives,
    approx: &'a [ApproxRow],
}

pub fn approx_rows(d: &LtDerivatives, grid: &[f64]) -> Vec<ApproxRow> {
    grid.iter()
        .map(|&lambda| ApproxRow {
            lambda,
            r_app: d.approx(lambda),
        })
        .collect()
}

pub fn analyze(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let derivs = LtDerivatives::new(&cfg.capacities, cfg.distribution.mean())?;
    let rows = approx_rows(&derivs, &cfg.lambda_grid);
    match args.format.unwrap_or(Format::Json) {
        Format::Json => {
            let body = to_json(&AnalyzeOutput {
                derivatives: &derivs,
                approx: &rows,
            })?;
            write_artifact(args.out.as_deref(), &body)?;
            if let Some(out) = &args.out {
                write_artifact(Some(&companion_path(out)), &to_csv(&rows)?)?;
            }
            Ok(())
        }
        Format::Csv => write_artifact(args.out.as_deref(), &to_csv(&rows)?),
    }
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let cfg = load(&args.common)?;
    let report = run_verify(
        &cfg,
        VerifyOptions {
            samples: args.samples,
            seed: cfg.seed,
            tol: args.tol,
            corrupt_capacity: args.corrupt_capacity,
        },
    )?;
    let body = match args.common.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&report)?,
        Format::Csv => to_csv(&report.checks.iter().map(CsvCheck::from).collect::<Vec<_>>())?,
    };
    write_artifact(args.common.out.as_deref(), &body)?;
    for c in report.checks.iter().filter(|c| !c.pass) {
        log::warn!(
            "{} {} failed: closed {} vs {} (discrepancy {:+e})",
            c.group,
            c.quantity,
            c.closed_form,
            c.mc_mean,
            c.discrepancy
        );
    }
    if report.summary.pass {
        Ok(())
    } else {
        Err(CliError::Verification {
            failed: report.summary.failed,
            total: report.summary.total,
        })
    }
}

/// Flat record for CSV output (the CSV writer cannot emit optional columns).
#[derive(Debug, Serialize)]
struct CsvCheck<'a> {
    group: &'a str,
    quantity: &'a str,
    method: &'a str,
    closed_form: f64,
    mc_mean: f64,
    mc_half_width: f64,
    samples: u64,
    discrepancy: f64,
    tolerance: f64,
    pass: bool,
}

impl<'a> From<&'a crate::verify::CheckRecord> for CsvCheck<'a> {
    fn from(c: &'a crate::verify::CheckRecord) -> Self {
        CsvCheck {
            group: c.group,
            quantity: &c.quantity,
            method: c.method,
            closed_form: c.closed_form,
            mc_mean: c.mc_mean,
            mc_half_width: c.mc_half_width,
            samples: c.samples,
            discrepancy: c.discrepancy,
            tolerance: c.tolerance,
            pass: c.pass,
        }
    }
}

/// A sweep row as written to CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_response: f64,
    pub half_width_95: f64,
    pub runs: usize,
    pub busy_periods_per_run: usize,
    pub total_jobs: u64,
    pub seed: u64,
}

impl SweepRow {
    fn new(e: &SimEstimate, seed: u64) -> Self {
        SweepRow {
            lambda: e.lambda,
            mean_response: e.mean_response,
            half_width_95: e.half_width_95,
            runs: e.runs,
            busy_periods_per_run: e.busy_periods_per_run,
            total_jobs: e.total_jobs,
            seed,
        }
    }
}

fn run_grid(cfg: &ScenarioConfig, points: &[(usize, f64)]) -> Result<Vec<SweepRow>, CliError> {
    points
        .iter()
        .map(|&(i, lambda)| {
            log::info!("simulating lambda = {lambda}");
            let est = simulate_point(cfg, lambda, i, SimOptions::default())?;
            Ok(SweepRow::new(&est, cfg.seed))
        })
        .collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load(&args.common)?;
    // first grid point (or the single --lambda value) with grid-position-0 streams
    let rows = run_grid(&cfg, &[(0, cfg.lambda_grid[0])])?;
    let body = match args.common.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&rows[0])?,
        Format::Csv => to_csv(&rows)?,
    };
    write_artifact(args.common.out.as_deref(), &body)
}

#[derive(Debug, Serialize)]
struct SweepOutput<'a> {
    sweep: &'a [SweepRow],
    approx: &'a [ApproxRow],
}

pub fn sweep(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let points: Vec<(usize, f64)> = cfg.lambda_grid.iter().copied().enumerate().collect();
    let rows = run_grid(&cfg, &points)?;
    let approx = match cfg.capacities.len() {
        1 => Vec::new(),
        _ => approx_rows(
            &LtDerivatives::new(&cfg.capacities, cfg.distribution.mean())?,
            &cfg.lambda_grid,
        ),
    };
    match args.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            write_artifact(args.out.as_deref(), &to_csv(&rows)?)?;
            if let (Some(out), false) = (&args.out, approx.is_empty()) {
                write_artifact(Some(&companion_path(out)), &to_csv(&approx)?)?;
            }
            Ok(())
        }
        Format::Json => write_artifact(
            args.out.as_deref(),
            &to_json(&SweepOutput {
                sweep: &rows,
                approx: &approx,
            })?,
        ),
    }
}

#[derive(Debug, Serialize)]
struct ScenarioRow {
    name: &'static str,
    k: usize,
    d: usize,
    family: &'static str,
    runs: usize,
    busy_periods_per_run: usize,
    seed: u64,
    lambda_grid: String,
}

pub fn scenarios(args: &ScenariosArgs) -> Result<(), CliError> {
    if let Some(name) = &args.show {
        let text = config::bundled(name)
            .ok_or_else(|| CliError::Usage(format!("no bundled scenario named {name}")))?;
        return write_artifact(None, text);
    }
    let mut rows = Vec::new();
    for (name, text) in BUNDLED {
        let cfg = config::parse_config_str(text, name)?;
        rows.push(ScenarioRow {
            name,
            k: cfg.capacities.len(),
            d: cfg.d,
            family: cfg.distribution.family().name(),
            runs: cfg.runs,
            busy_periods_per_run: cfg.busy_periods_per_run,
            seed: cfg.seed,
            lambda_grid: cfg
                .lambda_grid
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        });
    }
    let body = match args.format.unwrap_or(Format::Csv) {
        Format::Csv => to_csv(&rows)?,
        Format::Json => to_json(&rows)?,
    };
    write_artifact(None, &body)
}

fn workers(command: &Command) -> Option<usize> {
    match command {
        Command::Analyze(a) | Command::Sweep(a) => a.workers,
        Command::Verify(v) => v.common.workers,
        Command::Simulate(s) => s.common.workers,
        Command::Scenarios(_) => None,
    }
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let dispatch = || match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Verify(v) => verify(v),
        Command::Simulate(s) => simulate(s),
        Command::Sweep(a) => sweep(a),
        Command::Scenarios(s) => scenarios(s),
    };
    match workers(&cli.command) {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(dispatch),
        None => dispatch(),
    }
}
