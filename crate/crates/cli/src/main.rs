mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use config::Settings;
use std::path::PathBuf;
use std::process::ExitCode;

/// Boundary-regression nested NER: synthetic data, training, prediction and experiments.
#[derive(Debug, Parser)]
#[command(name = "boundreg", version)]
struct Cli {
    /// Log filter, e.g. `info` or `boundreg=debug`; RUST_LOG works too.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand takes.
#[derive(Debug, clap::Args)]
struct Common {
    /// Run directory for outputs and the manifest; created if missing.
    #[arg(short, long)]
    out: PathBuf,
    /// TOML file with settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Gamma,
    Lambda,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic nested-entity corpus.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        sentences: usize,
        /// Number of entity types.
        #[arg(long, default_value_t = 5)]
        types: usize,
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        #[arg(long, default_value_t = 8)]
        min_sentence_len: usize,
        #[arg(long, default_value_t = 30)]
        max_sentence_len: usize,
        /// Target fraction of entities involved in nesting.
        #[arg(long, default_value_t = 0.35)]
        nesting: f64,
        /// Comma-separated relative weights of entity lengths 1, 2, ...
        #[arg(long, value_delimiter = ',')]
        length_weights: Option<Vec<f64>>,
        /// Also write an 80/10/10 train/dev/test split.
        #[arg(long)]
        split: bool,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        /// Scored after training when given.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Per-token vectors; selects precomputed input.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Continue from a checkpoint; --epochs then counts additional epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also save `checkpoints/epoch-NNNN.ckpt` every N epochs, plus the initial state.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Predict entities for a corpus.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Score predictions, or a model, against a gold corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gold: PathBuf,
        /// Prediction file from `predict`.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Train and score the classification-only ablation (no regression head).
    AblateBbc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Precision, recall and F1 over a grid of gamma (retrains) or lambda (re-decodes).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Model to decode (lambda sweeps).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training corpus (gamma sweeps).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Corpus to score.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Every non-background box each checkpoint predicts for one sentence, before suppression.
    DumpTrajectories {
        #[command(flatten)]
        common: Common,
        /// Checkpoints in training order.
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Sentence id; defaults to the first sentence.
        #[arg(long)]
        sentence: Option<String>,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
