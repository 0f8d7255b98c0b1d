//! Experiment runner for the limiting-dynamics toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, Key};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "manifold-sgd", version, about = "Reproducible experiments on SGD limiting dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Base seed; replaces the `seed` key.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Set one config key; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Check closed-form projection derivatives against finite differences.
    VerifyDerivatives,
    /// Rotation speed of the limiting diffusion on the k-phase motor.
    Motor,
    /// Sparse recovery through the limiting flow (or label-noise SGD).
    OlmRecover,
    /// One trajectory of the limiting flow on a linear model.
    OlmFlow,
    /// Distance between SGD and limit ensembles across learning rates.
    SgdVsLimit,
    /// Test loss of the kernel-regime predictor.
    KernelBaseline,
}

type Runner = fn(&Config, &Path) -> CliResult<()>;

impl Command {
    fn plan(self) -> (Vec<Key>, Runner) {
        use commands::*;
        match self {
            Command::VerifyDerivatives => (verify::keys(), verify::run),
            Command::Motor => (motor::keys(), motor::run),
            Command::OlmRecover => (olm::recover_keys(), olm::recover),
            Command::OlmFlow => (olm::flow_keys(), olm::flow),
            Command::SgdVsLimit => (sweep::keys(), sweep::run),
            Command::KernelBaseline => (kernel::keys(), kernel::run),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (schema, run) = cli.command.plan();
    let outcome = Config::load(&schema, cli.config.as_deref(), &cli.overrides, cli.seed).and_then(|cfg| run(&cfg, &cli.out));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
