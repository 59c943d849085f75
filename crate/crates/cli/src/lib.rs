//! `ossmc` command-line interface.
//!
//! Subcommands: `price`, `greeks`, `sweep`, `oracle-check`, `calibrate`.
//! Inputs come from a TOML configuration file and/or flags (flags win);
//! results are written as CSV or JSON-lines records with a frozen schema
//! (see `docs/output-schema.md`).
//!
//! Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::sweep::SweepParam;

#[derive(Parser)]
#[command(
    name = "ossmc",
    version,
    about = "One-step survival Monte Carlo for discretely monitored barrier options"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price one instrument with the chosen estimator.
    Price(PriceArgs),
    /// Pathwise Greeks next to CRN central finite differences.
    Greeks(GreeksArgs),
    /// Sweep a parameter and emit one record per grid point and estimator.
    Sweep(SweepArgs),
    /// Compare the estimators against the quadrature oracle (n_obs <= 3).
    OracleCheck(OracleCheckArgs),
    /// Calibrate (barrier, sigma) of a CoCo-bond model.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub barrier: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub strike: Option<f64>,
    #[arg(long)]
    pub n_obs: Option<u32>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    pub knock: Option<KnockArg>,
    #[arg(long, value_enum)]
    pub payoff: Option<PayoffArg>,
    /// Digital coupon amount.
    #[arg(long)]
    pub coupon: Option<f64>,
    /// Forward delivery price.
    #[arg(long)]
    pub delivery: Option<f64>,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[arg(long)]
    pub n_paths: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses the rayon default. Defaults to the
    /// OSSMC_THREADS environment variable when unset.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct PriceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args)]
pub struct GreeksArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Central FD step for s0 and barrier bumps.
    #[arg(long, default_value_t = 1e-2)]
    pub fd_delta_price: f64,
    /// Central FD step for mu and sigma bumps.
    #[arg(long, default_value_t = 1e-4)]
    pub fd_delta_rate: f64,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Which parameter the grid runs over.
    #[arg(long, value_enum, default_value_t = SweepParam::S0)]
    pub param: SweepParam,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Explicit grid values (comma-separated); alternative to from/to/step.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    /// Estimators to run at every grid point.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [EstimatorArg::Standard, EstimatorArg::Oss, EstimatorArg::OssPathwise])]
    pub estimators: Vec<EstimatorArg>,
    /// Forward FD step for the Delta column.
    #[arg(long, default_value_t = 1e-2)]
    pub fd_delta: f64,
}

#[derive(Args)]
pub struct OracleCheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Gauss-Legendre nodes per dimension.
    #[arg(long, default_value_t = 64)]
    pub nodes: usize,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Calibration problem TOML file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub estimator: Option<CocoEstimatorArg>,
    #[arg(long)]
    pub n_paths: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write per-iteration trace records to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionArg {
    Up,
    Down,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnockArg {
    Out,
    In,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayoffArg {
    VanillaCall,
    Digital,
    Forward,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorArg {
    Standard,
    Oss,
    OssPathwise,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    NelderMead,
    GaussNewtonFd,
    GaussNewtonPathwise,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CocoEstimatorArg {
    Standard,
    Oss,
}

/// Usage/validation errors exit with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ossmc::Error> for CliError {
    fn from(e: ossmc::Error) -> Self {
        match e {
            ossmc::Error::Optimizer(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

/// Runs `f` inside a rayon pool of `threads` workers (0 = default pool).
fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Parses the command line and runs the selected command.
pub fn run_cli() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Price(args) => commands::price::run(&args),
        Command::Greeks(args) => commands::greeks::run(&args),
        Command::Sweep(args) => commands::sweep::run(&args),
        Command::OracleCheck(args) => commands::oracle_check::run(&args),
        Command::Calibrate(args) => commands::calibrate::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ossmc: error: {}", e.message());
            e.exit_code()
        }
    }
}
