//! One binary, subcommand style: generate synthetic logit datasets, fit
//! calibrators, evaluate calibration metrics, and self-check gradients.
//!
//! Exit codes: 0 success, 1 internal or training failure, 2 usage or
//! validation error. Every command accepts `--config FILE` with a flat
//! JSON object whose keys are the long flag names with dashes replaced by
//! underscores; explicit flags override file values, unknown keys are
//! rejected.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use commands::{calibrate, eval, grad_check, synth};

#[derive(Parser)]
#[command(name = "glayers", version, about = "Post-hoc classifier calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic logit dataset with a known posterior.
    Synth(synth::SynthArgs),
    /// Fit a calibrator on a calibration set of logits.
    Calibrate(calibrate::CalibrateArgs),
    /// Evaluate calibration metrics of a (calibrated) dataset.
    Eval(eval::EvalArgs),
    /// Verify the analytic gradients against finite differences.
    GradCheck(grad_check::GradCheckArgs),
}

/// Failures split by exit code.
pub enum CliError {
    /// Exit 2: bad flags, bad config, invalid inputs.
    Usage(String),
    /// Exit 1: I/O failures past validation, training divergence, bugs.
    Internal(String),
}

impl From<glayers_core::Error> for CliError {
    fn from(e: glayers_core::Error) -> Self {
        use glayers_core::Error;
        match e {
            Error::Validation(_) | Error::Format(_) | Error::State(_) => {
                CliError::Usage(e.to_string())
            }
            Error::Io(_) | Error::TrainingDiverged { .. } => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult = Result<(), CliError>;

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Calibrate(args) => calibrate::run(args),
        Command::Eval(args) => eval::run(args),
        Command::GradCheck(args) => grad_check::run(args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            std::process::exit(2);
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
