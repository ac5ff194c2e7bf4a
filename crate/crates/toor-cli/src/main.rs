//! Command-line entry point for dataset generation, training runs,
//! zeta sweeps, evaluation, and detection metrics.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on
//! runtime failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use toor_core::error::Error;
use toor_core::trainer::Method;

#[derive(Parser)]
#[command(
    name = "toor",
    about = "Class-mismatched semi-supervised training harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the training method.
    #[arg(long)]
    method: Option<String>,
    /// Override the OOD proportion of the unlabeled pool.
    #[arg(long)]
    zeta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as CSV.
    GenData(Common),
    /// Train one run (first seed of the seed list).
    Train(Common),
    /// Evaluate a checkpoint on the configured test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint produced by a training run.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the full (method, zeta, seed) grid and aggregate accuracies.
    Sweep(Common),
    /// Detection metrics and score histogram from a pool-state dump.
    Metrics {
        /// Pool dump (pool.csv) from a training run.
        #[arg(long)]
        pool: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(name) = &common.method {
        let method = Method::parse(name)
            .ok_or_else(|| Error::Config(format!("unknown method '{name}'")))?;
        cfg.method = method;
        cfg.sweep_methods = vec![method];
    }
    if let Some(zeta) = common.zeta {
        if !(0.0..=1.0).contains(&zeta) {
            return Err(Error::Config(format!("zeta {zeta} out of [0,1]")));
        }
        cfg.split.zeta = zeta;
        cfg.sweep_zetas = vec![zeta];
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<PathBuf, Error> {
    match cli.command {
        Command::GenData(common) => commands::cmd_gen_data(&load_config(&common)?),
        Command::Train(common) => commands::cmd_train(&load_config(&common)?),
        Command::Evaluate { common, checkpoint } => {
            commands::cmd_evaluate(&load_config(&common)?, &checkpoint)
        }
        Command::Sweep(common) => commands::cmd_sweep(&load_config(&common)?),
        Command::Metrics { pool, out } => commands::cmd_metrics(&out, &pool),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Render clap's help/usage text but keep our exit-code contract.
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Usage(_) | Error::Parse { .. } => ExitCode::from(1),
                Error::Io { .. } | Error::Diagnostic(_) => ExitCode::from(2),
            }
        }
    }
}
