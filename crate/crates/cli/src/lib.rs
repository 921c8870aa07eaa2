//! The `spill` command line: subcommand definitions, config resolution and
//! artifact writing. `main.rs` only parses arguments and maps errors to exit
//! codes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod emit;

pub use config::{Format, ResolvedConfig, RunConfig};

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input paths (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Estimation or I/O failure while running (exit 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Tags a core error with the module that raised it. Window-plan and
/// simulation-spec problems are configuration mistakes.
pub(crate) fn module_error(module: &str, e: spill_core::Error) -> CliError {
    let msg = format!("{module}: {e}");
    match e {
        spill_core::Error::Plan(_) | spill_core::Error::Spec(_) => CliError::Usage(msg),
        _ => CliError::Runtime(msg),
    }
}

#[derive(Debug, Parser)]
#[command(name = "spill", version, about = "Quantile VAR spillover analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full-sample decomposition and spillover indices at each quantile.
    Fit(FitArgs),
    /// Spillover indices over rolling windows.
    Rolling(RollingArgs),
    /// Contagion tests and event spillover changes around a depeg event.
    Event(EventArgs),
    /// Total spillover across a grid of lag orders, horizons and quantile sets.
    Robustness(RobustnessArgs),
    /// Simulate a price panel from a VAR specification.
    Simulate(SimulateArgs),
}

/// Flags shared by the estimation subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Price panel CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Asset metadata JSON (`{"ID": {"category": ...}}`).
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Comma-separated asset subset.
    #[arg(long, value_delimiter = ',')]
    pub assets: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output formats.
    #[arg(long, value_delimiter = ',')]
    pub emit: Option<Vec<Format>>,
    /// Resample prices to the last observation in buckets of this many seconds.
    #[arg(long)]
    pub resample_seconds: Option<i64>,
    /// Omit the generation-time line so reruns are byte-identical.
    #[arg(long)]
    pub no_timestamp: bool,
}

/// Model flags for a single specification.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Minimum FEVD share for a network edge.
    #[arg(long)]
    pub edge_threshold: Option<f64>,
    /// Pairs kept in the pairwise tail-minus-median ranking.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RollingArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EventArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Event JSON (`{name, affected, event_time, calm, crisis, donors}`).
    #[arg(long)]
    pub event: Option<PathBuf>,
    /// Trailing window of the synthetic-control outcome proxy.
    #[arg(long)]
    pub proxy_window: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated lag orders (Panel A).
    #[arg(long)]
    pub lags: Option<String>,
    /// Comma-separated horizons (Panel B).
    #[arg(long)]
    pub horizons: Option<String>,
    /// Comma-separated quantile sets, levels joined by `/` (Panel C).
    #[arg(long)]
    pub quantile_sets: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Simulation spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output price CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write `{"ID": {"category": ...}}` metadata here.
    #[arg(long)]
    pub metadata_out: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

/// Applies `SPILL_THREADS` to the global pool; later calls are no-ops.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SPILL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("SPILL_THREADS must be a positive integer, got `{raw}`")))?;
    // fails only if the pool was already built, e.g. by an earlier call in-process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => commands::fit::run(&a),
        Command::Rolling(a) => commands::rolling::run(&a),
        Command::Event(a) => commands::event::run(&a),
        Command::Robustness(a) => commands::robustness::run(&a),
        Command::Simulate(a) => commands::simulate::run(&a),
    }
}
