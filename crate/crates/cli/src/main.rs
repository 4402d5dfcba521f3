//! `sleepssl` command-line pipeline: ingest or synthesise an epoch store,
//! pretrain the encoders, extract features, fit and evaluate the SVM.

mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sleepssl", version, about = "Self-supervised EEG sleep-stage features with a linear SVM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` run configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pair PSG and hypnogram EDF files and cut them into labelled epochs.
    Ingest {
        /// Directory of `*-PSG.edf` / `*-Hypnogram.edf` files
        /// (default: $SLEEPSSL_DATA_DIR).
        #[arg(long)]
        psg_dir: Option<PathBuf>,
        /// Signal label to extract (default: the configured channel).
        #[arg(long)]
        channel: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a labelled synthetic epoch store.
    Synth {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 5)]
        subjects: usize,
        /// Generator seed (default: the configured seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Standard deviation of the additive Gaussian noise.
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Self-supervised pretraining of both encoders.
    Pretrain {
        #[arg(long)]
        store: PathBuf,
        /// resnet18 or resnet50 (overrides `encoder`).
        #[arg(long)]
        encoder: Option<String>,
        /// Share of pretext epochs to train on (overrides `fraction`).
        #[arg(long)]
        fraction: Option<f64>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (default: `<out>.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a feature table from a checkpoint, or the raw epochs.
    Features {
        #[arg(long, required_unless_present = "raw")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        /// time, spec or concat.
        #[arg(long, default_value = "concat")]
        view: String,
        /// Export the epoch samples themselves.
        #[arg(long, conflicts_with = "view")]
        raw: bool,
        /// eval, pretext or all (default: the checkpoint's evaluation
        /// subjects, or all).
        #[arg(long)]
        subjects: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Cross-validate the linear SVM and fit it on every row.
    Svm {
        #[arg(long)]
        features: PathBuf,
        /// Subject folds (overrides `folds`).
        #[arg(long)]
        folds: Option<usize>,
        /// Misclassification penalty (overrides `svm_c`).
        #[arg(long = "C", value_name = "C")]
        c: Option<f64>,
        /// Model path; the report goes to `<out>.report.{csv,txt}`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a fitted model on a feature table.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Report base path (default: `<features>.eval`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest {
            psg_dir,
            channel,
            out,
            config,
        } => commands::ingest(&config, psg_dir, channel, &out),
        Command::Synth {
            classes,
            per_class,
            subjects,
            seed,
            noise,
            out,
            config,
        } => commands::synth(&config, classes, per_class, subjects, seed, noise, &out),
        Command::Pretrain {
            store,
            encoder,
            fraction,
            out,
            log,
            config,
        } => commands::pretrain(&config, &store, encoder, fraction, &out, log),
        Command::Features {
            checkpoint,
            store,
            view,
            raw,
            subjects,
            out,
            config,
        } => commands::features(&config, checkpoint.as_deref(), &store, &view, raw, subjects, &out),
        Command::Svm {
            features,
            folds,
            c,
            out,
            config,
        } => commands::svm(&config, &features, folds, c, &out),
        Command::Evaluate {
            model,
            features,
            out,
            config,
        } => commands::evaluate(&config, &model, &features, out),
    }
}
