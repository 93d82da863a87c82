//! `flpre`: simulate, fit, subsample, benchmark and predict for the
//! scalar-on-function multiplicative model.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use clap::{Parser, Subcommand};
use std::process::ExitCode;

mod benchmark;
mod config;
mod fit;
mod predict;
mod simulate;
mod subsample_cmd;

use flpre::ErrorKind;

#[derive(Parser)]
#[command(name = "flpre", version, about = "Functional multiplicative regression by penalized relative-error estimation, with optimal subsampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (functional CSV, responses CSV, meta.json)
    Simulate(simulate::SimulateArgs),
    /// Fit a full-data model and persist it as JSON
    Fit(fit::FitArgs),
    /// Fit by subsampling (two-step optimal or one-shot uniform)
    Subsample(subsample_cmd::SubsampleArgs),
    /// Replicated subsampling study with timing and metric tables
    Benchmark(benchmark::BenchmarkArgs),
    /// Predict responses for new curves from a saved model
    Predict(predict::PredictArgs),
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("FLPRE_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t >= 1 => {
                // a failure here only means a pool already exists
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global();
            }
            _ => {
                eprintln!("error: FLPRE_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Fit(args) => fit::run(args),
        Command::Subsample(args) => subsample_cmd::run(args),
        Command::Benchmark(args) => benchmark::run(args),
        Command::Predict(args) => predict::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Usage => ExitCode::from(2),
                ErrorKind::Data => ExitCode::from(3),
                ErrorKind::Numerical => ExitCode::from(4),
            }
        }
    }
}
