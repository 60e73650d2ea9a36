//! `rrnn`: data preparation, synthesis, training, evaluation, what-if
//! simulation and serving.
//!
//! Exit codes: 0 success, 1 runtime failure or failed check, 2 usage error,
//! 3 configuration error (the message names the field).

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rrnn_core::neural::LossMode;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Pos,
    Vel,
}

impl From<LossArg> for LossMode {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Pos => LossMode::Position,
            LossArg::Vel => LossMode::Velocity,
        }
    }
}

fn horizon_parser(allowed: &'static [&'static str]) -> impl clap::builder::TypedValueParser<Value = usize> {
    use clap::builder::TypedValueParser;
    clap::builder::PossibleValuesParser::new(allowed).map(|s| s.parse::<usize>().expect("listed values are numbers"))
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = horizon_parser(&["12", "20", "32"]))]
    pub t_obs: Option<usize>,
    #[arg(long, global = true, value_parser = horizon_parser(&["8", "12", "20"]))]
    pub t_pred: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub loss: Option<LossArg>,
    /// Bit-identical re-runs: no wall-clock values in any artifact.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Ingest trajectory CSVs, resample and split into folds.
    Prepare {
        /// Directory of `frame,agent_id,agent_type,controlled,x,y` CSV files.
        #[arg(long)]
        input: PathBuf,
        /// Type labels, in index order, for files without a metadata sidecar.
        #[arg(long, value_delimiter = ',', default_value = "agent,robot")]
        labels: Vec<String>,
        /// Frame rate of files without a metadata sidecar.
        #[arg(long)]
        source_rate: Option<f64>,
        #[arg(long)]
        test_fold: Option<usize>,
    },
    /// Generate the synthetic `straight`, `crossing` and `approach` suites
    /// and the demo scenarios.
    Synth,
    /// Train a model on a prepared dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate models on datasets as described by an experiment file.
    Eval {
        #[arg(long)]
        experiment: PathBuf,
    },
    /// Mean predictions of a checkpoint on the held-out fold of a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Roll out a window under candidate robot paths.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario or what-if request (JSON, world meters).
        #[arg(long)]
        window: PathBuf,
        /// One candidate per line as `x,y` points separated by spaces; the
        /// window's own candidates (or realized robot future) by default.
        #[arg(long)]
        paths: Option<PathBuf>,
    },
    /// Serve what-if predictions over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario bundle written by `synth`; generated on the fly if absent.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Finite-difference check of the model gradient.
    Gradcheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Prepare { .. } => "prepare",
            Self::Synth => "synth",
            Self::Train { .. } => "train",
            Self::Eval { .. } => "eval",
            Self::Predict { .. } => "predict",
            Self::Simulate { .. } => "simulate",
            Self::Serve { .. } => "serve",
            Self::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "rrnn", version, about = "Robot-conditioned trajectory response prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
