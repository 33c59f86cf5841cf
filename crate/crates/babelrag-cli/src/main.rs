//! Command-line front end: index validation, single-question retrieval
//! runs, policy training on the synthetic environment, dataset
//! evaluation and collection-removal ablations. All randomness flows
//! from config seeds, so identical invocations write identical files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NO_ANSWER: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;
pub const EXIT_NON_FINITE: u8 = 5;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("search budget exhausted without an answer")]
    NoAnswer,
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("{0}")]
    NonFiniteLoss(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::NoAnswer => EXIT_NO_ANSWER,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::NonFiniteLoss(_) => EXIT_NON_FINITE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "babelrag",
    version,
    about = "Multi-turn cross-lingual retrieval loop with a trainable search policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate corpus files and print per-language document counts.
    Index {
        /// Corpus JSONL file; repeat for multiple files.
        #[arg(long = "corpus", required = true)]
        corpus: Vec<PathBuf>,
        /// Optional path for a JSON summary of the counts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question with the retrieval loop.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        question: String,
        /// Language code of the question.
        #[arg(long)]
        lang: String,
        /// Print the JSONL turn trace before the answer.
        #[arg(long)]
        trace: bool,
    },
    /// Train the search policy on the synthetic environment.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for train_log.csv and policy.json.
        #[arg(long)]
        out: PathBuf,
        /// Override [clpo].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override [clpo].updates.
        #[arg(long)]
        updates: Option<usize>,
        /// Override [clpo].learning_rate.
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Evaluate a question dataset and write per-language reports.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory for eval_report.csv and eval_report.json.
        #[arg(long)]
        out: PathBuf,
        /// Override [eval].seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the collection-removal degradation matrix.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Directory for ablation.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let outcome = match cli.command {
        Command::Index { corpus, out } => commands::cmd_index(&corpus, out.as_deref()),
        Command::Run {
            config,
            question,
            lang,
            trace,
        } => commands::cmd_run(&config, &question, &lang, trace),
        Command::Train {
            config,
            out,
            seed,
            updates,
            learning_rate,
        } => commands::cmd_train(&config, &out, seed, updates, learning_rate),
        Command::Eval { config, out, seed } => commands::cmd_eval(&config, &out, seed),
        Command::Ablate { config, out } => commands::cmd_ablate(&config, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
