//! Command-line frontend for `switchstab`.

pub mod commands;
pub mod config;

use std::io;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use switchstab::LambdaVariant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Hypothesis(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("degenerate ensemble: {0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Hypothesis(_) => 2,
            CliError::Grid(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    #[value(name = "formula_a")]
    FormulaA,
    #[value(name = "formula_b")]
    FormulaB,
}

impl From<VariantArg> for LambdaVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::FormulaA => LambdaVariant::FormulaA,
            VariantArg::FormulaB => LambdaVariant::FormulaB,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "switchstab",
    version,
    about = "Delayed sampled-data stabilisation of switching diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ensembles; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantArg>,
    /// Round `tau0` down to the time grid instead of failing.
    #[arg(long, global = true)]
    pub snap_to_grid: bool,
    /// Also run the fine-step ensemble of the second example case.
    #[arg(long, global = true)]
    pub full: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Print the design report for the configured scenario.
    Design,
    /// Write one trajectory CSV per path plus a manifest.
    Simulate,
    /// Write ensemble moment curves and exponent estimates.
    Estimate,
    /// Recompute the two-mode example and print a pass/fail table.
    ReproduceExample,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Design => commands::design(cli),
        Command::Simulate => commands::simulate(cli),
        Command::Estimate => commands::estimate(cli),
        Command::ReproduceExample => commands::reproduce_example(cli),
    }
}
