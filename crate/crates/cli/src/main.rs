mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Globals;
use crate::config::{ConfigFile, EvaluateArgs, ExplainArgs, GenerateArgs, PlotArgs, TrainArgs};
use crate::error::{CliError, EXIT_INPUT};

/// Train kernel preference models and explain their preferences with Shapley values.
///
/// Set PREFSHAP_LOG (e.g. `info`, `debug`) to control log output.
#[derive(Parser)]
#[command(name = "prefshap", version)]
struct Cli {
    /// Seed for data generation, the train/val/test split and coalition sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV files.
    Generate(GenerateArgs),
    /// Fit a model on the training split and report AUC on every split.
    Train(TrainArgs),
    /// Recompute split AUCs for a saved model.
    Evaluate(EvaluateArgs),
    /// Explain selected matches or items with Shapley values.
    Explain(ExplainArgs),
    /// Render an explanations file as an SVG bar or beeswarm plot.
    Plot(PlotArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let threads = cli
        .threads
        .or(file.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::input("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::input(e.to_string()))?;
    let g = Globals {
        seed,
        threads,
        config_file: cli.config.as_deref(),
    };
    match cli.command {
        Command::Generate(a) => commands::generate(&a.resolve(file.generate)?, &g),
        Command::Train(a) => commands::train(&a.resolve(file.train, seed)?, &g),
        Command::Evaluate(a) => commands::evaluate(&a.resolve(file.evaluate)?, &g),
        Command::Explain(a) => commands::explain(&a.resolve(file.explain, seed)?, &g),
        Command::Plot(a) => commands::plot(&a.resolve(file.plot)?, &g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PREFSHAP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
