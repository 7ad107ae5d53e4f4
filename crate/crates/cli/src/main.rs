//! `esc`: data statistics, normalization, training, evaluation, LLM
//! benchmarking and reporting.

mod commands;
mod configs;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "esc", version, about = "Multitask fine-tuning toolkit for Vietnamese student comments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides the seed of the loaded config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `cpu`, `cuda` or `cuda:N`; overrides the loaded config.
    #[arg(long, global = true)]
    pub device: Option<String>,
    /// Run directory; defaults to `runs/<command>-<timestamp>`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Sentiment,
    Topic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Zero,
    Few,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label, split, length and vocabulary tables of a dataset.
    Stats {
        #[arg(long)]
        data: String,
    },
    /// Cleans texts and expands shorthand with an acronym lexicon.
    Normalize {
        /// Dataset file or directory, or a `.txt` file with one text per line.
        #[arg(long)]
        input: PathBuf,
        /// Tab-separated `shorthand<TAB>expansion` lexicon; built-in list if absent.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Cleaning options (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stratified train/validation/test split.
    Split {
        #[arg(long)]
        data: String,
        /// Comma-separated train,validation,test fractions.
        #[arg(long, default_value = "0.7,0.1,0.2")]
        ratios: String,
    },
    /// Labeled synthetic corpus for offline runs.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
    },
    /// Trains one model.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue the run stored in `--output`.
        #[arg(long)]
        resume: bool,
    },
    /// Scores a saved checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Trains and tests every cell of an experiment matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
    },
    /// Zero- or few-shot benchmark of a chat-completion model.
    LlmBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "zero")]
        mode: ModeArg,
        /// `remote` (default), `mock-oracle`, or `mock-constant=<label>`.
        #[arg(long, default_value = "remote")]
        provider: String,
    },
    /// Merges result rows of earlier runs into one report.
    Report {
        /// Run directories holding `rows.json`.
        #[arg(long = "from", required = true, num_args = 1..)]
        from: Vec<PathBuf>,
    },
    /// Repeats a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stats { .. } => "stats",
            Command::Normalize { .. } => "normalize",
            Command::Split { .. } => "split",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Matrix { .. } => "matrix",
            Command::LlmBench { .. } => "llm-bench",
            Command::Report { .. } => "report",
            Command::Rerun { .. } => "rerun",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use esc_core::Error as E;
    for cause in err.chain() {
        if cause.is::<configs::UsageError>() || cause.is::<run::LockHeld>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config { .. } | E::Schema { .. } | E::Load(_) | E::UnknownTask(_) | E::Lexicon(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
