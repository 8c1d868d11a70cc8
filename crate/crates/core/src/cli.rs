//! `rankbreak` command-line front end.
//!
//! Settings resolve as flags, then the optional `--config` TOML file, then
//! built-in defaults. Exit codes: 0 success, 2 configuration error, 3 data
//! error, 4 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{diagnose, DiagnosticsError};
use crate::estimator::{
    fit_order_m, full_mle_small, oracle_mle, pairwise_rb_inconsistent, EstimatorError, FitOptions, FitResult,
};
use crate::experiment::{run_experiment, write_csv, EstimatorKind, ExperimentError, ExperimentSpec, Timing};
use crate::io::{self, IoError, LabelMap, Protocol, TruthFile};
use crate::likelihood::{Dataset, LikelihoodError};
use crate::synth::{generate_canonical, tradeoff_block_sizes, ScenarioConfig, SynthError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(_) | SynthError::Model(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidOptions(_) => CliError::Config(e.to_string()),
            EstimatorError::EmptyDataset
            | EstimatorError::KappaTooLarge { .. }
            | EstimatorError::MissingRefinement(_)
            | EstimatorError::Poset(_)
            | EstimatorError::Likelihood(LikelihoodError::OrderTooLarge { .. })
            | EstimatorError::Likelihood(LikelihoodError::EmptyLikelihood(_)) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Invalid(_) => CliError::Config(e.to_string()),
            ExperimentError::Synth(s) => s.into(),
            ExperimentError::Fit { source, .. } => source.into(),
            ExperimentError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::TooManyItems { .. } | DiagnosticsError::NoEdges | DiagnosticsError::EmptyGraph => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rankbreak", version, about = "Generalized rank-breaking for Plackett-Luce models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset and its ground truth.
    Generate(GenerateArgs),
    /// Coarsen full rankings from a CSV file into a dataset.
    Ingest(IngestArgs),
    /// Fit utilities to a dataset.
    Fit(FitArgs),
    /// Report spectral constants and error bounds for a dataset.
    Diagnose(DiagnoseArgs),
    /// Run a seeded estimator sweep and write CSV.
    Experiment(ExperimentArgs),
}

/// Keys accepted in a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<String>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub kappa: Option<KappaArg>,
    pub blocks: Option<Vec<usize>>,
    pub c: Option<f64>,
    pub seed: Option<u64>,
    pub b: Option<f64>,
    #[serde(rename = "M")]
    pub order: Option<usize>,
    #[serde(rename = "M_values")]
    pub m_values: Option<Vec<usize>>,
    pub n_values: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub estimator: Option<String>,
    pub workers: Option<usize>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub timing: Option<String>,
    pub protocol: Option<String>,
    pub m: Option<usize>,
}

/// Offer-set size: an integer or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaArg {
    Size(usize),
    Named(AllTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllTag {
    All,
}

impl KappaArg {
    fn size(self) -> Option<usize> {
        match self {
            KappaArg::Size(k) => Some(k),
            KappaArg::Named(AllTag::All) => None,
        }
    }
}

impl std::str::FromStr for KappaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(KappaArg::Named(AllTag::All));
        }
        s.parse().map(KappaArg::Size).map_err(|_| format!("kappa must be an integer or 'all', got '{s}'"))
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_named<T: std::str::FromStr<Err = String>>(value: &str) -> Result<T, CliError> {
    value.parse().map_err(CliError::Config)
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// canonical or tradeoff
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Offer-set size, or `all`.
    #[arg(long)]
    pub kappa: Option<KappaArg>,
    /// Revealed block sizes, most preferred first.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    /// Tradeoff-scenario constant.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ScenarioArgs {
    /// Resolves a scenario with `n` users.
    fn resolve(&self, file: &FileConfig, n: usize) -> Result<ScenarioConfig, CliError> {
        let kind = self.scenario.clone().or(file.scenario.clone()).unwrap_or_else(|| "canonical".into());
        let d = self.d.or(file.d).ok_or_else(|| CliError::Config("--d is required".into()))?;
        let b = self.b.or(file.b).unwrap_or(2.0);
        let seed = self.seed.or(file.seed).unwrap_or(0);
        let (kappa, block_sizes) = match kind.as_str() {
            "canonical" => {
                let blocks = self
                    .blocks
                    .clone()
                    .or(file.blocks.clone())
                    .ok_or_else(|| CliError::Config("--blocks is required for the canonical scenario".into()))?;
                (self.kappa.or(file.kappa).and_then(KappaArg::size), blocks)
            }
            "tradeoff" => {
                let c = self.c.or(file.c).unwrap_or(0.5);
                (None, tradeoff_block_sizes(d, c)?)
            }
            other => return Err(CliError::Config(format!("unknown scenario '{other}'"))),
        };
        let config =
            ScenarioConfig { d, n, kappa, block_sizes, theta: None, b, seed, keep_top_orderings: false };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub n: Option<usize>,
    /// Dataset JSONL path.
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth sidecar (default: `<output>.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the hidden within-block orderings here.
    #[arg(long)]
    pub orderings: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Header-less CSV, one best-first ranking of labels per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Block size.
    #[arg(long)]
    pub m: Option<usize>,
    /// split or blocks
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
    /// Label map (default: `<output>.labels.json`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub orderings: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Item count (default: largest id + 1).
    #[arg(long)]
    pub d: Option<usize>,
    /// grb, prb, oracle or full_mle
    #[arg(long)]
    pub estimator: Option<String>,
    /// Order cap for grb.
    #[arg(long = "M")]
    pub order: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Hidden orderings, required by the oracle.
    #[arg(long)]
    pub orderings: Option<PathBuf>,
    /// Ground truth; adds the squared error to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "M")]
    pub order: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Order caps for grb.
    #[arg(long = "M", value_delimiter = ',')]
    pub m_values: Option<Vec<usize>>,
    /// User counts.
    #[arg(long = "n", value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated subset of grb, prb, oracle, full_mle.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// wall or off (off writes 0 seconds for reproducible files)
    #[arg(long)]
    pub timing: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Prints a line, ignoring a closed stdout (e.g. piped into `head`).
fn stdout_line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json_report<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            stdout_line(&text);
            Ok(())
        }
    }
}

fn edge_histogram(dataset: &Dataset) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for obs in dataset.observations() {
        for e in obs.edges() {
            *hist.entry(e.m()).or_insert(0) += 1;
        }
    }
    hist
}

fn print_summary(dataset: &Dataset) {
    let hist: Vec<String> = edge_histogram(dataset).iter().map(|(m, c)| format!("m={m}:{c}")).collect();
    stdout_line(&format!("n = {}, d = {}, edges by m: {}", dataset.n(), dataset.d(), hist.join(" ")));
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let n = args.n.or(file.n).ok_or_else(|| CliError::Config("--n is required".into()))?;
    let mut config = args.scenario.resolve(&file, n)?;
    config.keep_top_orderings = args.orderings.is_some();
    log::info!("generate: {}", serde_json::to_string(&config).unwrap_or_default());
    let data = generate_canonical::<f64>(&config)?;
    io::write_dataset(&args.output, &data.dataset)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| sidecar(&args.output, ".truth.json"));
    io::write_truth(&truth_path, &TruthFile { theta: data.theta_star.to_vec(), b: config.b })?;
    if let (Some(path), Some(hidden)) = (&args.orderings, &data.hidden) {
        io::write_orderings(path, hidden)?;
    }
    print_summary(&data.dataset);
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let m = args.m.or(file.m).ok_or_else(|| CliError::Config("--m is required".into()))?;
    let protocol: Protocol =
        parse_named(&args.protocol.clone().or(file.protocol.clone()).unwrap_or_else(|| "blocks".into()))?;
    let input = File::open(&args.input).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let ingested = io::ingest_rankings(input, m, protocol)?;
    io::write_dataset(&args.output, &ingested.dataset)?;
    let labels_path = args.labels.clone().unwrap_or_else(|| sidecar(&args.output, ".labels.json"));
    io::write_labels(&labels_path, &ingested.labels)?;
    if let Some(path) = &args.orderings {
        io::write_orderings(path, &ingested.hidden)?;
    }
    print_summary(&ingested.dataset);
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitReport {
    estimator: String,
    #[serde(rename = "M")]
    order: usize,
    d: usize,
    n: usize,
    effective_sample_size: usize,
    theta_hat: Vec<f64>,
    final_value: f64,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
    tolerance: f64,
    seconds: f64,
    permutation_terms: u64,
    disconnected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    squared_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let kind: EstimatorKind =
        parse_named(&args.estimator.clone().or(file.estimator.clone()).unwrap_or_else(|| "grb".into()))?;
    let order = args.order.or(file.order).unwrap_or(1);
    if order == 0 {
        return Err(CliError::Config("--M must be at least 1".into()));
    }
    let opts = FitOptions::<f64> {
        b: args.b.or(file.b).unwrap_or(2.0),
        max_iters: args.max_iters.or(file.max_iters).unwrap_or(5000),
        grad_tol: args.grad_tol.or(file.grad_tol).unwrap_or(1e-7),
        workers: args.workers.or(file.workers).unwrap_or(1),
        ..Default::default()
    };
    let dataset = io::read_dataset(&args.input, args.d)?;
    let (fit, order_used): (FitResult<f64>, usize) = match kind {
        EstimatorKind::Grb => (fit_order_m(&dataset.with_order(order), &opts)?, order),
        EstimatorKind::Prb => (pairwise_rb_inconsistent(&dataset, &opts)?, 0),
        EstimatorKind::FullMle => (full_mle_small(&dataset, &opts)?, 0),
        EstimatorKind::Oracle => {
            let path = args
                .orderings
                .as_ref()
                .ok_or_else(|| CliError::Config("the oracle needs --orderings".into()))?;
            (oracle_mle(&dataset, &io::read_orderings(path)?, &opts)?, 0)
        }
    };
    if !fit.converged {
        log::warn!("stopped after {} iterations (gradient-mapping norm {:e})", fit.iterations, fit.grad_norm);
    }
    let squared_error = match &args.truth {
        Some(path) => {
            let truth = io::read_truth(path)?;
            if truth.theta.len() != dataset.d() {
                return Err(CliError::Data(format!(
                    "truth has {} entries, dataset has d = {}",
                    truth.theta.len(),
                    dataset.d()
                )));
            }
            Some(fit.theta_hat.iter().zip(&truth.theta).map(|(a, b)| (a - b) * (a - b)).sum())
        }
        None => None,
    };
    let labels_path = sidecar(&args.input, ".labels.json");
    let labels = labels_path.exists().then(|| io::read_labels(&labels_path)).transpose()?.map(|l: LabelMap| l.labels);
    let report = FitReport {
        estimator: kind.name().into(),
        order: order_used,
        d: dataset.d(),
        n: dataset.n(),
        effective_sample_size: dataset.with_order(order).effective_sample_size(),
        theta_hat: fit.theta_hat.to_vec(),
        final_value: fit.final_value,
        iterations: fit.iterations,
        converged: fit.converged,
        grad_norm: fit.grad_norm,
        tolerance: fit.tolerance,
        seconds: fit.wall_time.as_secs_f64(),
        permutation_terms: fit.permutation_terms_evaluated,
        disconnected: fit.disconnected,
        squared_error,
        labels,
    };
    write_json_report(args.output.as_deref(), &report)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let order = args.order.or(file.order).unwrap_or(1);
    if order == 0 {
        return Err(CliError::Config("--M must be at least 1".into()));
    }
    let b = args.b.or(file.b).unwrap_or(2.0);
    let dataset = io::read_dataset(&args.input, args.d)?.with_order(order);
    let report = diagnose(&dataset, b)?;
    write_json_report(args.output.as_deref(), &report)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    let file = load_config(args.config.as_deref())?;
    let n_values =
        args.n_values.clone().or(file.n_values.clone()).ok_or_else(|| CliError::Config("--n is required".into()))?;
    let scenario = args.scenario.resolve(&file, n_values.iter().copied().max().unwrap_or(1).max(1))?;
    let estimators = args
        .estimators
        .clone()
        .or(file.estimators.clone())
        .unwrap_or_else(|| vec!["grb".into()])
        .iter()
        .map(|s| parse_named::<EstimatorKind>(s))
        .collect::<Result<Vec<_>, _>>()?;
    let timing: Timing = parse_named(&args.timing.clone().or(file.timing.clone()).unwrap_or_else(|| "wall".into()))?;
    let spec = ExperimentSpec {
        base_seed: scenario.seed,
        scenario,
        m_values: args.m_values.clone().or(file.m_values.clone()).unwrap_or_else(|| vec![1]),
        n_values,
        trials: args.trials.or(file.trials).unwrap_or(20),
        estimators,
        max_iters: args.max_iters.or(file.max_iters).unwrap_or(5000),
        grad_tol: args.grad_tol.or(file.grad_tol).unwrap_or(1e-7),
        workers: args.workers.or(file.workers).unwrap_or(1),
        timing,
    };
    let rows = run_experiment(&spec)?;
    let out = File::create(&args.output).map_err(|e| CliError::Data(format!("{}: {e}", args.output.display())))?;
    write_csv(BufWriter::new(out), &spec, &rows)?;
    stdout_line(&format!("{} rows written to {}", rows.len(), args.output.display()));
    Ok(())
}

/// Runs a parsed command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rankbreak: {e}");
            e.exit_code()
        }
    }
}
