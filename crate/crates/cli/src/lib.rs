//! Command-line driver: parses scenario configs, runs single scenarios,
//! baseline comparisons, the ablation ladder, the uncertainty study and the
//! toy evidential fit, and writes CSV outputs.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::execute;
pub use config::{parse_config, parse_config_str, Config, ConfigFile};

#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration could not be read, parsed or validated.
    #[error("config error: {0}")]
    Config(String),
    /// A run or an output write failed.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for configuration errors, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<eviplan_core::Error> for CliError {
    fn from(e: eviplan_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "eviplan", version, about = "Perception-aware planning simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured scenario for each seed.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Run the constant, forward and perception-aware policies on identical seeds.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Run the ablation ladder vanilla, +ow, +ow+or, +ow+or+sc on identical seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Bin regression error against aleatoric, epistemic and entropy values.
    Uncertainty {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit per-bin evidential parameters to a synthetic 1-D dataset.
    FitDemo {
        #[arg(long, short, default_value = "out")]
        output_dir: PathBuf,
        #[arg(long, env = "EVIPLAN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Also print the CSV to standard output.
        #[arg(long)]
        stdout: bool,
    },
    /// Parse and validate a config, then print its canonical hash.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
        /// Print the canonical form with every key written out.
        #[arg(long)]
        canonical: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long, short, default_value = "out")]
    pub output_dir: PathBuf,
    /// First run seed; later repeats use the following seeds.
    #[arg(long, env = "EVIPLAN_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also print the summary CSV to standard output.
    #[arg(long)]
    pub stdout: bool,
}

/// Entropy components of the perception-aware policy. Any switch replaces
/// the flags from the config; `--vanilla` turns all of them off.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct AblationArgs {
    #[arg(long, conflicts_with_all = ["ow", "or", "sc"])]
    pub vanilla: bool,
    #[arg(long)]
    pub ow: bool,
    #[arg(long)]
    pub or: bool,
    #[arg(long)]
    pub sc: bool,
}

impl AblationArgs {
    pub fn any(&self) -> bool {
        self.vanilla || self.ow || self.or || self.sc
    }
}
