//! `latent-rom`: generate data, train reduced models, predict, diagnose
//! and check gradients. Every verb except predict and diagnose reads one
//! TOML config; `--set key.path=value` overrides single entries.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numeric failure,
//! 3 IO error. `LATENT_ROM_THREADS` sets the worker thread count.

mod cmd;
mod config;
mod error;
mod force;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "latent-rom", version, about = "Stability-preserving latent reduced-order models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    config: PathBuf,
    /// Override a config entry, e.g. `--set train.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset from a stable full-order system, a Jeffery orbit or
    /// matrices on disk.
    Generate(ConfigArgs),
    /// Fit a model; writes the model file and optionally the loss history.
    Train(ConfigArgs),
    /// Roll a model out from each test series' initial state.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Per-step error file (default `<out>.metrics`).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Every series, not just the model's test split.
        #[arg(long)]
        all: bool,
    },
    /// Stability report for a model file.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        probe_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare BPTT gradients with central differences.
    Gradcheck(ConfigArgs),
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("LATENT_ROM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("LATENT_ROM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<String> {
    configure_threads()?;
    match cli.command {
        Command::Generate(a) => cmd::generate::run(&a.config, &a.sets),
        Command::Train(a) => cmd::train::run(&a.config, &a.sets),
        Command::Predict {
            model,
            data,
            horizon,
            out,
            metrics,
            all,
        } => cmd::predict::run(&cmd::predict::PredictArgs {
            model,
            data,
            horizon,
            out,
            metrics,
            all,
        }),
        Command::Diagnose {
            model,
            data,
            probe_steps,
            out,
        } => cmd::diagnose::run(&cmd::diagnose::DiagnoseArgs {
            model,
            data,
            probe_steps,
            out,
        }),
        Command::Gradcheck(a) => cmd::gradcheck::run(&a.config, &a.sets),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(report) => {
            let _ = std::io::stdout().write_all(report.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
