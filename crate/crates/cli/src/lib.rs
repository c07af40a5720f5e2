//! Command-line front end: `winstate <subcommand> [--config FILE] ...`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] winstate::Error),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(winstate::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "winstate", version, about = "Window-state prediction from indoor climate sequences")]
pub struct Cli {
    /// TOML run configuration; built-in defaults are used without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for grid search, repeated training and lag sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the configured seed everywhere.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic office data set and its trigger log.
    GenData,
    /// Train one model with the [train] hyperparameters.
    Train,
    /// Train and rank every point of the [grid] section.
    Grid,
    /// Evaluate a saved model, or train and evaluate repeatedly.
    Eval,
    /// Retrain for each prediction lag and summarize metrics.
    LagSweep,
    /// Sparsity, first-layer weight map and case-study episodes.
    Analyze,
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    base.resolve(&Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out.clone(),
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context {
        config: resolve_config(cli)?,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::GenData => commands::cmd_gen_data(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Grid => commands::cmd_grid(&ctx),
        Command::Eval => commands::cmd_eval(&ctx),
        Command::LagSweep => commands::cmd_lag_sweep(&ctx),
        Command::Analyze => commands::cmd_analyze(&ctx),
    }
}
