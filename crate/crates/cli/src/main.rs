//! `dgr`: build indexes, train, distill, retrieve and evaluate generative
//! retrieval models from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{DecodeArgs, DistillArgs, ExtractArgs, ModelArgs, PathArgs, SynthArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "dgr", version, about = "Generative passage retrieval with rank distillation")]
struct Cli {
    /// TOML file with defaults for any flag; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Seed {
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus, query splits and judgments to --out.
    Synth {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Build the identifier index for a corpus.
    BuildIndex {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        extract: ExtractArgs,
    },
    /// Warm-start a model on the generation loss alone.
    Train {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        extract: ExtractArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Distill a teacher ranking into a warm-started model.
    Distill {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        extract: ExtractArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        distill: DistillArgs,
    },
    /// Retrieve passages for every query and write a TREC run.
    Retrieve {
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Run tag written in the last column
        #[arg(long, default_value = "dgr")]
        tag: String,
    },
    /// Score a TREC run against judgments.
    Evaluate {
        #[command(flatten)]
        paths: PathArgs,
        /// System name in the table header and JSON line
        #[arg(long)]
        label: Option<String>,
    },
    /// Finite-difference check of every distillation loss on a small model.
    Gradcheck {
        #[command(flatten)]
        seed: Seed,
        /// Coordinates checked per loss
        #[arg(long, default_value_t = 120)]
        coords: usize,
        /// Largest accepted relative error
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Distill once per value of one hyperparameter and tabulate the metrics.
    Sweep {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        paths: PathArgs,
        #[command(flatten)]
        extract: ExtractArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        distill: DistillArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SweepParam {
    #[value(name = "m_gap")]
    MGap,
    #[value(name = "M")]
    M,
}

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or missing inputs (exit 2).
    Usage(String),
    /// Anything that went wrong while running (exit 1).
    Runtime(String),
}

impl From<dgr::Error> for Failure {
    fn from(e: dgr::Error) -> Self {
        match e {
            dgr::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
