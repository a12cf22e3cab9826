mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "polar-imp", version, about = "Polar code construction by iterative message passing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that never change results.
#[derive(Args, Clone, Debug)]
pub struct Runtime {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// FER worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// JSON file with option values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a construction with a trained model.
    Construct(commands::ConstructArgs),
    /// Train a model with deep Q-learning.
    Train(commands::TrainArgs),
    /// Continue training a model at one SNR.
    FineTune(commands::FineTuneArgs),
    /// Simulate the FER of one construction over an SNR grid.
    Evaluate(commands::EvaluateArgs),
    /// Simulate several constructions over a shared SNR grid.
    Compare(commands::CompareArgs),
    /// Classical GA or Bhattacharyya construction.
    Baseline(commands::BaselineArgs),
    /// Check the special-case message passing against the classical recursion.
    #[command(name = "verify-claim1")]
    VerifyClaim1(commands::Claim1Args),
    /// Compare analytic gradients with finite differences.
    Gradcheck(commands::GradcheckArgs),
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl From<polar_imp::Error> for CliError {
    fn from(e: polar_imp::Error) -> Self {
        CliError {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Construct(a) => commands::construct(a),
        Command::Train(a) => commands::train(a),
        Command::FineTune(a) => commands::fine_tune(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::VerifyClaim1(a) => commands::verify_claim1(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
