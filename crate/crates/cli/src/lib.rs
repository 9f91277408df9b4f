//! Command-line front end: argument parsing, configuration and the
//! subcommands that drive the pipeline.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{RunConfig, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "advx",
    version,
    about = "Adversarial removal of protected user attributes from a VAE recommender"
)]
pub struct Cli {
    /// `key=value` configuration file (a run manifest works too).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (`run.out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sets the model, data and adversary seeds at once.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Concurrent grid runs (`run.workers`).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Gradient reversal factor of one attribute, e.g. `gender=400`.
    #[arg(long = "lambda", global = true, value_name = "ATTR=VALUE")]
    pub lambdas: Vec<String>,
    /// Any configuration key, e.g. `train.epochs_adversarial=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw files, filter, and write the dataset cache and statistics.
    Preprocess,
    /// Run the adversarial removal phase on one fold.
    Train,
    /// Train attackers on the frozen encoder of a trained fold.
    Attack {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Score ranking quality and attacker metrics on the test users.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every λ combination on every fold.
    Grid,
    /// Write encoder means and attacker predictions of the test users.
    ExportEmbeddings {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.read_file(path)?;
        }
        for pair in &self.set {
            s.set_pair(pair, "--set")?;
        }
        if let Some(out) = &self.out {
            s.set("run.out", &out.display().to_string(), "--out")?;
        }
        if let Some(seed) = self.seed {
            for k in ["seed.model", "seed.data", "seed.adversary"] {
                s.set(k, &seed.to_string(), "--seed")?;
            }
        }
        if let Some(w) = self.workers {
            s.set("run.workers", &w.to_string(), "--workers")?;
        }
        for pair in &self.lambdas {
            s.set_pair(&format!("lambda.{pair}"), "--lambda")?;
        }
        s.build()
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.run_config()?;
    match &cli.command {
        Command::Preprocess => commands::preprocess(&config).map(|_| ()),
        Command::Train => commands::train(&config),
        Command::Attack { checkpoint } => commands::attack(&config, checkpoint.as_deref()),
        Command::Eval { checkpoint } => commands::eval(&config, checkpoint.as_deref()),
        Command::Grid => commands::grid(&config),
        Command::ExportEmbeddings { checkpoint } => {
            commands::export_embeddings(&config, checkpoint.as_deref()).map(|_| ())
        }
    }
}
