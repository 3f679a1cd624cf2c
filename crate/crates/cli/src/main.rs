use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scatterpos::commands::{self, Globals};
use scatterpos::error::CliError;

/// Piston position estimation from scattering parameters: synthetic data
/// generation, model training, evaluation and benchmarking.
#[derive(Parser)]
#[command(name = "scatterpos", version, about)]
struct Cli {
    /// Master seed; the SCATTERPOS_SEED environment variable overrides it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Default directory for outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it with its manifest.
    Gen(commands::GenArgs),
    /// Train a model and write checkpoint + history.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint or the physical baseline on a partition.
    Eval(commands::EvalArgs),
    /// Train the comparison grid and report per-seed and median metrics.
    Ablate(commands::AblateArgs),
    /// Measure parameters, inference latency and epoch throughput.
    Bench(commands::BenchArgs),
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let mut seed = cli.seed;
    if let Ok(env_seed) = std::env::var("SCATTERPOS_SEED") {
        seed = env_seed.parse().map_err(|_| {
            CliError::Argument(format!("SCATTERPOS_SEED is not a u64: '{env_seed}'"))
        })?;
    }
    let globals = Globals {
        seed,
        out_dir: cli.out_dir,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Gen(args) => commands::gen(&globals, args),
        Command::Train(args) => commands::train_cmd(&globals, args),
        Command::Eval(args) => commands::eval_cmd(&globals, args),
        Command::Ablate(args) => commands::ablate(&globals, args),
        Command::Bench(args) => commands::bench(&globals, args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
