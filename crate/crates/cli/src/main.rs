//! `subdpp` command-line tool: synthetic experiments, fitting, evaluation, sampling and
//! extractive summarization.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] subdpp::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "subdpp", version, about = "Low-rank DPP experiments and summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw ground-truth models and corpora for every replicate.
    Generate {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every (replicate, rank) cell of a generated dataset, or a document corpus.
    Fit {
        #[command(flatten)]
        opts: Overrides,
        /// Directory written by `generate`.
        #[arg(long, required_unless_present = "docs")]
        data: Option<PathBuf>,
        /// Documents JSONL (`{"id":..,"text":..}` per line) to fit a sentence model on.
        #[arg(long, requires = "vocab", conflicts_with = "data")]
        docs: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Rank for `--docs`; defaults to the first rank of the sweep.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Keep cells whose model was already written under the same config.
        #[arg(long)]
        resume: bool,
    },
    /// Score fitted models against the generating ones on held-out data.
    Eval {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fits: PathBuf,
        /// Metrics CSV, one row per (replicate, rank, metric).
        #[arg(long)]
        out: PathBuf,
        /// Mean and variance across replicates.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Monte-Carlo trials for the simulated chance level; 0 reports 1 - r/V only.
        #[arg(long, default_value_t = 0)]
        chance_trials: usize,
    },
    /// Draw exact samples from a model file.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract an l-sentence summary of every document.
    Summarize {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, alias = "input")]
        docs: PathBuf,
        /// Summary length in sentences.
        #[arg(long, alias = "len", default_value_t = 5)]
        l: usize,
        /// Fit each document's θ before selecting.
        #[arg(long)]
        fit_theta: bool,
        #[arg(long, alias = "output")]
        out: PathBuf,
    },
    /// Nearest words by cosine similarity of embedding rows.
    Neighbors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        word: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// K(x, q) of a two-dimensional spectrum over a regular grid, as CSV.
    KernelGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.5, 0.5])]
        q: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a vocabulary from a documents JSONL file.
    Vocab {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { opts, out } => commands::generate(&opts.resolve()?, &out),
        Command::Fit { opts, data, docs, vocab, rank, out, resume } => {
            let cfg = opts.resolve()?;
            match (data, docs, vocab) {
                (_, Some(docs), Some(vocab)) => commands::fit_docs(&cfg, &docs, &vocab, rank, &out),
                (Some(data), _, _) => commands::fit(&cfg, &data, &out, resume),
                _ => Err(CliError::Config("fit needs --data or --docs with --vocab".into())),
            }
        }
        Command::Eval { opts, data, fits, out, summary, chance_trials } => {
            commands::eval(&opts.resolve()?, &data, &fits, &out, summary.as_deref(), chance_trials)
        }
        Command::Sample { model, out, count, seed } => commands::sample(&model, &out, count, seed),
        Command::Summarize { opts, model, vocab, docs, l, fit_theta, out } => {
            commands::summarize(&opts.resolve()?, &model, &vocab, &docs, l, fit_theta, &out)
        }
        Command::Neighbors { model, vocab, word, k } => commands::neighbors(&model, &vocab, &word, k),
        Command::KernelGrid { model, q, res, out } => commands::kernel_grid(&model, [q[0], q[1]], res, &out),
        Command::Vocab { docs, size, out } => commands::vocab(&docs, size, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
