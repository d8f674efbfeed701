use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsemi::bench::DEFAULT_REPETITIONS;
use fedsemi::cli::{self, CliError, ExperimentConfig};
use fedsemi::federation::{Executor, WORKERS_ENV};

/// Semi-supervised federated learning simulator.
///
/// Exit status: 0 on success, 1 for configuration errors, 2 for run-time errors.
#[derive(Parser)]
#[command(version, after_help = format!("{WORKERS_ENV}=N runs replicates on N worker threads."))]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate of an experiment and write CSVs and checkpoints.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time a checkpointed pipeline against its counterpart on one-second windows.
    Bench {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
        repetitions: usize,
    },
    /// Print the contents of a checkpoint as JSON.
    Inspect { checkpoint: PathBuf },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            out,
            replicates,
            seed,
        } => {
            let mut cfg = load(&config, out)?;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if let Some(s) = seed {
                cfg.federation.seed = s;
            }
            // Re-check overrides through the same validation as the file.
            let cfg = ExperimentConfig::from_json(&cfg.to_json())?;
            let exec = Executor::from_env()?;
            let done = cli::run(&cfg, &exec)?;
            println!("{}", done.metrics_csv.display());
            println!("{}", done.aggregate_csv.display());
        }
        Command::Bench {
            config,
            checkpoint,
            out,
            repetitions,
        } => {
            let cfg = load(&config, out)?;
            let done = cli::bench(&cfg, &checkpoint, repetitions)?;
            let summary = std::fs::read_to_string(&done.summary_json).unwrap_or_default();
            println!("{summary}");
        }
        Command::Inspect { checkpoint } => {
            let v = cli::inspect(&checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
