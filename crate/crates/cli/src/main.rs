//! Experiment runner for power-controlled federated learning over
//! interference-limited wireless uplinks.

mod commands;
mod config;
mod experiment;
mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use flpower_core::policy::PolicyKind;

use config::ConfigFlags;

#[derive(Parser)]
#[command(
    name = "flpower",
    about = "GCN power allocation for federated learning over wireless uplinks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned power policy (gcn or mlp) with the primal-dual loop.
    Train {
        /// Policy to train: gcn | mlp.
        #[arg(long)]
        policy: PolicyKind,
        /// Run directory for the checkpoint, training log, and config snapshot.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Evaluate one policy's weighted-sum PER on the test channels.
    Eval {
        /// Policy to evaluate: gcn | mlp | rand | orth.
        #[arg(long)]
        policy: PolicyKind,
        /// Directory holding the learned-policy checkpoints.
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Weighted-sum PER across the interference scaling factors.
    SweepInterference {
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Weighted-sum PER across the power-budget grid (one checkpoint per
    /// grid point for the learned policies).
    SweepPmax {
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Weighted-sum PER across network sizes without retraining.
    SweepSize {
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Policies to evaluate (the mlp is rejected: fixed input size).
        #[arg(long, default_value = "gcn,rand,orth")]
        policies: String,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Federated learning curves for every policy plus the ideal
    /// (no-loss) reference.
    FlRun {
        #[arg(long, default_value = "checkpoints")]
        ckpt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { policy, out, flags } => {
            commands::train::run(&flags.resolve()?, policy, &out)
        }
        Command::Eval {
            policy,
            ckpt_dir,
            out,
            flags,
        } => commands::eval::run(&flags.resolve()?, policy, &ckpt_dir, &out),
        Command::SweepInterference { ckpt_dir, out, flags } => {
            commands::sweeps::interference(&flags.resolve()?, &ckpt_dir, &out)
        }
        Command::SweepPmax { ckpt_dir, out, flags } => {
            commands::sweeps::pmax(&flags.resolve()?, &ckpt_dir, &out)
        }
        Command::SweepSize {
            ckpt_dir,
            out,
            policies,
            flags,
        } => {
            let kinds = experiment::parse_policies(&policies)?;
            commands::sweeps::size(&flags.resolve()?, &ckpt_dir, &out, &kinds)
        }
        Command::FlRun { ckpt_dir, out, flags } => {
            commands::fl::run(&flags.resolve()?, &ckpt_dir, &out)
        }
    }
}
