use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dwstrack", version, about = "Inertial odometry with DWSFormer")]
pub struct Cli {
    /// Seed for every random choice (data, split, initialisation, shuffling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration file (TOML with [model], [train] and [eval] tables).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Repeat the run recorded in a manifest file.
    #[arg(long, global = true)]
    pub from_manifest: Option<PathBuf>,
    /// Worker threads for per-sequence evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Drop the multi-scale gated convolution unit from every block.
    NoMsgcu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate synthetic IMU sequences and an 8:1:1 split.
    Synth {
        /// Synthesis recipe (TOML); a random-walk recipe by default.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Train on the train/val parts of a corpus.
    Train {
        /// Corpus directory with sequence files and splits.toml.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        /// Print parameter and FLOP counts and exit.
        #[arg(long)]
        dry_run: bool,
        /// Continue from a checkpoint with optimiser state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one part of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Part,
    },
    /// Reconstruct the trajectory of one sequence file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
    },
    /// Print the parameter table, stage shapes and FLOP breakdown.
    Inspect {
        /// Inspect the model stored in a checkpoint instead of the configured one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Window length for shapes and FLOPs; the model's own by default.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Predict { .. } => "predict",
            Command::Inspect { .. } => "inspect",
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v: Vec<Option<&PathBuf>> = Vec::new();
        match self {
            Command::Synth { profile, .. } => v.push(profile.as_ref()),
            Command::Train { data, resume, .. } => v.extend([data.as_ref(), resume.as_ref()]),
            Command::Eval { checkpoint, data, .. } => v.extend([Some(checkpoint), Some(data)]),
            Command::Predict { checkpoint, sequence } => v.extend([Some(checkpoint), Some(sequence)]),
            Command::Inspect { checkpoint, .. } => v.push(checkpoint.as_ref()),
        }
        v.into_iter().flatten().cloned().collect()
    }
}
