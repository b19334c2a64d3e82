mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsprt::experiment::ExperimentError;
use thiserror::Error;

use crate::config::{FamilyName, OutputFormat};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("censoring: {0}")]
    Censoring(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Censoring(_) => 3,
            CliError::Calibration(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidSpec(_) | ExperimentError::Model(_) => CliError::Config(e.to_string()),
            ExperimentError::AllCensored { .. } | ExperimentError::ExcessiveCensoring { .. } => {
                CliError::Censoring(e.to_string())
            }
            ExperimentError::Calibration(_) => CliError::Calibration(e.to_string()),
            ExperimentError::Engine(gsprt::centralized::EngineError::InvalidConfig(_)) => {
                CliError::Config(e.to_string())
            }
            ExperimentError::Engine(_) | ExperimentError::Mismatch(_) => CliError::Runtime(e.to_string()),
        }
    }
}

/// Sequential composite hypothesis tests over a sensor network.
#[derive(Debug, Parser)]
#[command(name = "gsprt", version, about)]
struct Cli {
    /// Worker threads for Monte Carlo batches (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raw and quantized KL divergences between two parameter values.
    Kl(KlArgs),
    /// Minimax one-bit quantizer threshold for a block length.
    Quantizer(QuantizerArgs),
    /// First-order expected sample sizes for given thresholds.
    Predict(PredictArgs),
    /// Resolve local and global thresholds of a run config without running it.
    Calibrate(ConfigArgs),
    /// Run a sweep config and write one record per grid point and scheme.
    Run(RunArgs),
    /// Write the event log of a single replication.
    Trace(TraceArgs),
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([p(a)?, p(b)?])
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "mean-shift")]
    family: FamilyName,
    /// Noise variance (mean-shift only).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Null interval as `lo,hi` [default: 0,0 or 0.2,1].
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    null: Option<[f64; 2]>,
    /// Alternative interval as `lo,hi` [default: 0.4,2 or 2,5].
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    alt: Option<[f64; 2]>,
}

impl ModelArgs {
    pub fn config(&self) -> config::ModelConfig {
        let (null, alt) = match self.family {
            FamilyName::MeanShift => ([0.0, 0.0], [0.4, 2.0]),
            FamilyName::Variance => ([0.2, 1.0], [2.0, 5.0]),
        };
        config::ModelConfig {
            family: self.family,
            sigma2: self.sigma2,
            null: self.null.unwrap_or(null),
            alt: self.alt.unwrap_or(alt),
        }
    }
}

#[derive(Debug, Args)]
pub struct KlArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Alternative parameter [default: lower end of the alternative set].
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Null parameter [default: upper end of the null set].
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1)]
    t0: u32,
    /// Quantizer threshold; quantized rows are printed only when given.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QuantizerArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    t0: u32,
    /// Grid spacing of the search over lambda.
    #[arg(long, default_value_t = 0.01)]
    resolution: f64,
    /// Approximate the worst case on this many points per interval.
    #[arg(long)]
    inner_grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SchemeArg {
    Centralized,
    Uniform,
    Lts,
    SimpleSprt,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "centralized")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    sensors: usize,
    /// Upper threshold A; defaults to `-ln alpha`.
    #[arg(long)]
    upper: Option<f64>,
    /// Lower threshold B; defaults to `-ln beta`.
    #[arg(long)]
    lower: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Uniform block length.
    #[arg(long, default_value_t = 1)]
    t0: u32,
    /// Uniform quantizer threshold; the minimax design when absent.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    config: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    config: PathBuf,
    /// Output file; overrides the config. Standard output when neither is set.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// No progress lines on standard error.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    config: PathBuf,
    /// Index into the config's scheme list.
    #[arg(long, default_value_t = 0)]
    scheme: usize,
    /// Grid point index.
    #[arg(long, default_value_t = 0)]
    point: usize,
    /// Replication index.
    #[arg(long, default_value_t = 0)]
    replication: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Kl(a) => commands::kl(&a),
        Command::Quantizer(a) => commands::quantizer(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Run(a) => commands::run(&a),
        Command::Trace(a) => commands::trace(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Config(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
