//! `rfsearch`: run global and local receptive-field searches from a JSON config.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfsearch_core::PmfKind;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration (exit 2).
    Usage(String),
    /// Failure while running (exit 3).
    Runtime(String),
}

impl CliError {
    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "rfsearch",
    version,
    about = "Global-to-local receptive-field search for dilated CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Genetic search over coarse dilation combinations.
    Global(RunArgs),
    /// Expectation-guided refinement of a genome.
    Local {
        #[command(flatten)]
        run: RunArgs,
        /// Genome JSON file, `baseline`, or an inline list such as `1,2,4,8`.
        #[arg(long)]
        init: Option<String>,
        /// Keep every sampled branch in the final structure.
        #[arg(long)]
        parallel: bool,
        /// Branch normalization: `abs`, `softmax` or `sigmoid`.
        #[arg(long)]
        pmf: Option<PmfKind>,
    },
    /// Train a fixed genome or parallel structure and report validation metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        init: Option<String>,
    },
    /// Exhaustive ranking and random-search baseline.
    Oracle(RunArgs),
    /// Aggregate trajectory CSVs under a directory into mean and std per checkpoint.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Global(run) => commands::global(&run),
        Command::Local {
            run,
            init,
            parallel,
            pmf,
        } => commands::local(&run, init.as_deref(), parallel, pmf),
        Command::Train { run, init } => commands::train(&run, init.as_deref()),
        Command::Oracle(run) => commands::oracle(&run),
        Command::Report { run_dir } => report::run(&run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
