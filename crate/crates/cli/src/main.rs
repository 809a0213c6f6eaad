//! `dipme`: dataset generation, training, evaluation, sweeps, map demos and
//! the mapping service behind one binary.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dipme_core::evaluation::Protocol;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<dipme_core::Error> for CliError {
    fn from(e: dipme_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                dipme_core::Error::from(e).into()
            }
        }
    )*};
}
via_core!(
    dipme_core::simulator::SimError,
    dipme_core::preprocess::PreprocessError,
    dipme_core::classifier::ClassifierError,
    dipme_core::evaluation::EvalError,
    dipme_core::mapping::MapError,
    std::io::Error
);

#[derive(Parser, Debug)]
#[command(name = "dipme", version, about = "Haptic granular-media recognition with a simulated dipping probe")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled dataset of simulated dips (JSONL).
    Simulate {
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        operators: Option<usize>,
    },
    /// Train the encoder on a held-out split and save the checkpoint.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue training this checkpoint; its history is extended.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Add sliding training windows at stride N/2.
        #[arg(long)]
        augment: bool,
        /// Train the per-node model used for mapping on simulated dips
        /// instead; `--dataset` is not needed.
        #[arg(long)]
        node_model: bool,
    },
    /// Evaluate under a protocol and write metrics and confusion matrices.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Use this checkpoint's model and training settings; under
        /// `holdout` it is scored as is on the whole dataset.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
    },
    /// Accuracy and timing per recognition length.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated lengths, e.g. 32,64,128,251.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
    },
    /// Run the mapping session service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        /// Skip the simulated 1.28 s acquisition time.
        #[arg(long)]
        instant_sampling: bool,
        /// Session persistence file.
        #[arg(long)]
        persist: Option<PathBuf>,
    },
    /// Render a confusion matrix from an eval report or a map from map JSON.
    Plot {
        #[arg(long, conflicts_with = "map", required_unless_present = "map")]
        report: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        /// Pixels per cell.
        #[arg(long, default_value_t = 10)]
        scale: u32,
    },
    /// Dip the default lab-box scene, composite the map and score it.
    MapDemo {
        /// Node model; trained from the configuration if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dips: Option<usize>,
    },
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("DIPME_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
