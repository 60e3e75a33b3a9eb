//! `peg`: fit, infer and simulate from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 numerical failure, 1 anything else.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use peg_core::inference::{infer_scaled, parse_methods};
use peg_core::peg::sandwich::sandwich_ci_cached;
use peg_core::peg::{FitControls, MomentCache, PenalizedFit};
use peg_core::simlab::runner::{methods_label, write_metrics_file, write_plot_file};
use peg_core::simlab::{run_replications, SimConfig, SimulationResult};
use peg_core::{
    fit_propensity, load_dataset, Analysis, CorrKind, Dataset, InferenceOptions, InferenceReport, Method, ModelIndexSet,
    PegError, Scaling, Schema,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable setting the worker thread count.
const THREADS_ENV: &str = "PEG_NUM_THREADS";

#[derive(Parser, Debug)]
#[command(name = "peg", version, about = "Penalized G-estimation with post-selection inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune and fit the penalized G-estimator.
    Fit(FitArgs),
    /// Intervals for the selected effect modifiers of a saved fit.
    Infer(InferArgs),
    /// Monte-Carlo evaluation of the interval methods.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct DataArgs {
    /// Long-format CSV, one row per person-session.
    #[arg(long)]
    data: PathBuf,
    /// JSON column mapping; defaults to id, time, y, a and all other columns as covariates.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: DataArgs,
    #[arg(long, default_value = "exch", value_parser = parse_corr)]
    corstr: CorrKind,
    /// `auto` for the tuning grid, or a fixed lambda on the standardized scale.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Comma-separated covariates of the propensity model; all covariates when absent.
    #[arg(long)]
    propensity: Option<String>,
    /// Level of the naive sandwich intervals in the report.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct InferArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Report written by `peg fit`.
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    input: DataArgs,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Required for `uposi`; also seeds the cross-validation folds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    /// JSON simulation config; unspecified fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_parser = parse_method_list)]
    methods: Option<MethodList>,
    #[arg(long)]
    seed: u64,
    /// Aggregate metrics CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-replication CSV of interval lengths and FCR.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Full JSON report with every replication.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: PegError| e.to_string())
}

#[derive(Debug, Clone)]
struct MethodList(Vec<Method>);

fn parse_method_list(s: &str) -> Result<MethodList, String> {
    let m = parse_methods(s).map_err(|e| e.to_string())?;
    if m.is_empty() {
        return Err("no methods given".into());
    }
    Ok(MethodList(m))
}

fn parse_corr(s: &str) -> Result<CorrKind, String> {
    s.parse().map_err(|e: PegError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Peg(#[from] PegError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Peg(e) => match e {
                PegError::InvalidParameter(_) => 2,
                PegError::Io(_)
                | PegError::Csv(_)
                | PegError::Json(_)
                | PegError::MissingValue { .. }
                | PegError::NonBinaryTreatment { .. }
                | PegError::Schema(_)
                | PegError::Dimension(_) => 1,
                _ => 3,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Saved by `peg fit`; everything `peg infer` needs to rebuild the fit.
#[derive(Debug, Serialize, Deserialize)]
struct FitReport {
    version: String,
    config: FitArgs,
    names: Vec<String>,
    scaling: Scaling,
    propensity_columns: ModelIndexSet,
    lambda_star: f64,
    selected: Vec<usize>,
    selected_names: Vec<String>,
    /// Original scale.
    delta: Vec<f64>,
    /// Original scale.
    psi: Vec<f64>,
    sigma2: f64,
    rho: Option<f64>,
    naive_intervals: Vec<peg_core::interval::CoordinateInterval>,
    /// The fit on the standardized data.
    fit: PenalizedFit,
}

#[derive(Debug, Serialize)]
struct InferOutput<'a> {
    version: &'a str,
    config: &'a InferArgs,
    seed: u64,
    names: &'a [String],
    report: &'a InferenceReport,
}

#[derive(Debug, Serialize)]
struct SimulateOutput<'a> {
    version: &'a str,
    config: &'a SimConfig,
    result: &'a SimulationResult,
}

fn load_data(input: &DataArgs) -> CliResult<Dataset> {
    let schema = match &input.schema {
        Some(p) => Schema::from_json_file(p)?,
        None => Schema::default(),
    };
    Ok(load_dataset(&input.data, &schema)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let w = BufWriter::new(File::create(path).map_err(PegError::from)?);
    serde_json::to_writer_pretty(w, value).map_err(PegError::from)?;
    Ok(())
}

fn propensity_columns(d: &Dataset, list: Option<&str>) -> CliResult<ModelIndexSet> {
    let Some(list) = list else {
        return Ok(ModelIndexSet::full(d.k()));
    };
    let mut idx = vec![0];
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let c = d
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Usage(format!("--propensity: unknown covariate `{name}`")))?;
        idx.push(c);
    }
    Ok(ModelIndexSet::new(idx, d.k())?)
}

fn run_fit(args: &FitArgs) -> CliResult<()> {
    let grid = match args.lambda.as_str() {
        "auto" => None,
        v => match v.parse::<f64>() {
            Ok(l) if l >= 0.0 && l.is_finite() => Some(vec![l]),
            _ => return Err(CliError::Usage(format!("--lambda must be `auto` or a non-negative number, got `{v}`"))),
        },
    };
    let d = load_data(&args.input)?;
    let cols = propensity_columns(&d, args.propensity.as_deref())?;
    let analysis = Analysis::new(&d, &cols, args.corstr, grid.as_deref(), &FitControls::default())?;
    let fit = analysis.fit();
    let naive = sandwich_ci_cached(&analysis.cache, fit, args.alpha)?
        .iter()
        .map(|iv| iv.unscale(analysis.scaling.factors[iv.coordinate]))
        .collect();
    let selected = fit.selected.indices().to_vec();
    let report = FitReport {
        version: VERSION.into(),
        config: args.clone(),
        names: d.names().to_vec(),
        scaling: analysis.scaling.clone(),
        propensity_columns: cols,
        lambda_star: analysis.tuning.lambda_star,
        selected_names: selected.iter().map(|&k| d.names()[k].clone()).collect(),
        selected,
        delta: analysis.delta(),
        psi: analysis.psi(),
        sigma2: fit.sigma2,
        rho: fit.corr.rho(),
        naive_intervals: naive,
        fit: fit.clone(),
    };
    write_json(&args.out, &report)
}

fn run_infer(args: &InferArgs) -> CliResult<()> {
    if args.method == Method::Uposi && args.seed.is_none() {
        return Err(CliError::Usage("--seed is required for --method uposi".into()));
    }
    let saved: FitReport = serde_json::from_reader(File::open(&args.fit).map_err(PegError::from)?).map_err(PegError::from)?;
    let d = load_data(&args.input)?;
    if d.names() != saved.names.as_slice() {
        return Err(CliError::Usage(format!("--data columns do not match the fit in {}", args.fit.display())));
    }
    let data = d.scaled(&saved.scaling);
    let pm = fit_propensity(&data, &saved.propensity_columns)?;
    let cache = MomentCache::new(&data, &pm)?;
    let seed = args.seed.unwrap_or(0);
    let opts = InferenceOptions {
        alpha: args.alpha,
        boot: args.boot,
        seed,
        cv_folds: args.cv_folds,
        cv_grid: None,
    };
    let report = infer_scaled(&data, &pm, &cache, &saved.fit, &saved.scaling, args.method, &opts)?;
    write_json(
        &args.out,
        &InferOutput {
            version: VERSION,
            config: args,
            seed,
            names: &saved.names,
            report: &report,
        },
    )
}

fn run_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg: SimConfig = match &args.config {
        Some(p) => serde_json::from_reader(File::open(p).map_err(PegError::from)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SimConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.0.clone();
    }
    log::info!(
        "simulating n={} K={} {} reps={} methods={}",
        cfg.n,
        cfg.k,
        cfg.corstr,
        cfg.reps,
        methods_label(&cfg.methods)
    );
    let res = run_replications(&cfg)?;
    write_metrics_file(&res, &args.out)?;
    if let Some(p) = &args.plot_data {
        write_plot_file(&res, p)?;
    }
    if let Some(p) = &args.report {
        write_json(
            p,
            &SimulateOutput {
                version: VERSION,
                config: &cfg,
                result: &res,
            },
        )?;
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Infer(a) => run_infer(a),
        Command::Simulate(a) => run_simulate(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
