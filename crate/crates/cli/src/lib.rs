//! Experiment driver for the `heatsc` library: configuration, `hbar` sweeps,
//! convergence regressions and report emission.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::Parser;

pub use commands::{run_command, Command, Outcome};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Library(#[from] heatsc::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for invalid input, 3 for numerical failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Library(e) if e.is_numerical() => 3,
            CliError::Library(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "heatsc", version, about = "Semi-classical heat-kernel experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `parametrix.N=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Recompute the oracle with a doubled cutoff and compare.
    #[arg(long, global = true)]
    pub selfcheck: bool,
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.pass {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path, &cli.overrides)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    with_pool(|| run_command(cli.command, &cfg, cli.selfcheck))
}

/// Runs `f` on a rayon pool sized by `HEATSC_THREADS` when set.
fn with_pool<T: Send>(f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    match std::env::var("HEATSC_THREADS") {
        Ok(v) => {
            let threads: usize = v
                .parse()
                .map_err(|_| CliError::Validation(format!("HEATSC_THREADS must be an integer, got '{v}'")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| CliError::Validation(e.to_string()))?;
            pool.install(f)
        }
        Err(_) => f(),
    }
}
