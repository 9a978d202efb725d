//! Command-line driver: dataset generation, training, evaluation, rollout,
//! timing and ablation sweeps, configured from a TOML file.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Stage, SweepAxis};
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "romforge", version, about = "Nonintrusive reduced-order modelling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides every seed (takes precedence over ROMFORGE_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (overrides evaluation.output_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solves all sampled trajectories and writes the dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the reduction and/or the stepper.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
    },
    /// Writes latent and high-fidelity error curves on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Use encoded ground truth instead of the stepper.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Rolls out one test case from its seed window.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        case: usize,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Times the high-fidelity solve against the online stage.
    Timing {
        #[command(flatten)]
        common: Common,
    },
    /// Trains and evaluates one variant per value of an axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long)]
        values: String,
        /// Evaluate the reduction alone (encoded ground-truth latents).
        #[arg(long)]
        reconstruction_only: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Rollout { common, .. }
            | Command::Timing { common }
            | Command::Sweep { common, .. } => common,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let ctx = commands::Context::new(&common.config, common.seed, common.out.clone())?;
    match &cli.command {
        Command::Generate { .. } => commands::cmd_generate(&ctx),
        Command::Train { stage, .. } => commands::cmd_train(&ctx, *stage),
        Command::Evaluate { ground_truth, .. } => commands::cmd_evaluate(&ctx, *ground_truth),
        Command::Rollout { case, steps, .. } => commands::cmd_rollout(&ctx, *case, *steps),
        Command::Timing { .. } => commands::cmd_timing(&ctx),
        Command::Sweep {
            axis,
            values,
            reconstruction_only,
            ..
        } => commands::cmd_sweep(&ctx, *axis, values, *reconstruction_only),
    }
}
