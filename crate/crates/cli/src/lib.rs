//! Experiment runner for the ensemble-smoother MPC library.
//!
//! `kalman-mpc run <config>` executes a closed-loop or oracle experiment and
//! `kalman-mpc compare <config>` a baseline or scaling comparison. Exit code
//! 2 means the command line or config did not parse, 1 a failure while
//! running.

pub mod config;
pub mod experiment;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, ExperimentKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Parse(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] inferential_control::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kalman-mpc", version, about = "Ensemble-smoother MPC experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log warnings only and skip the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-loop Burgers control or the linear oracle.
    Run { config: PathBuf },
    /// Baseline comparison or scaling table.
    Compare { config: PathBuf },
}

/// Loads a config and applies the command-line overrides.
pub fn load_config(path: &std::path::Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Run { config } => experiment::run(&load_config(&config, cli.seed, cli.out)?),
        Command::Compare { config } => experiment::compare(&load_config(&config, cli.seed, cli.out)?),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let quiet = cli.quiet;
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(summary) => {
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            }
            0
        }
        Err(e) => {
            eprintln!("kalman-mpc: {e}");
            e.exit_code()
        }
    }
}
