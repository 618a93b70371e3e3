//! `sica`: de-mix multi-dimensional sequences with KL-minimizing flows.
//!
//! Subcommands compose the library into file-based pipelines: `gen` writes
//! sources, `mix` entangles them, `demix` recovers signals (plus trace and
//! model checkpoints), `eval` scores against ground truth, `demo` bundles
//! the end-to-end experiments, and `sweep` reproduces the MCC-over-mixing
//! tables. Exit codes: 2 usage, 3 data, 4 numerical failure.

mod commands;
mod config;
mod errors;
mod logging;

use clap::{Parser, Subcommand, ValueEnum};
use config::ExperimentConfig;
use errors::CliError;
use sica_core::sica::FlowKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sica", version, about = "Self-sufficient ICA via KL-minimizing flows")]
struct Cli {
    /// Experiment configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Flow override.
    #[arg(long, global = true, value_enum)]
    flow: Option<FlowArg>,
    /// Worker threads for training and refinement.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowArg {
    Wgf,
    Rf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate source signals, writing `<out>/sources.csv`.
    Gen,
    /// Mix sources into observations, writing `<out>/mixed.csv`.
    Mix {
        /// Sources CSV (defaults to `<out>/sources.csv`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// De-mix observations: writes `<out>/recovered.csv`, `<out>/trace.csv`
    /// and `<out>/models/`.
    Demix {
        /// Observations CSV (defaults to `<out>/mixed.csv`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Replay a saved de-mixer on observations without retraining.
    Apply {
        /// Observations CSV.
        #[arg(long)]
        input: PathBuf,
        /// De-mixer directory written by `demix`.
        #[arg(long)]
        models: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score recovered signals against sources, writing `<out>/mcc.json`.
    Eval {
        /// Recovered CSV (defaults to `<out>/recovered.csv`).
        #[arg(long)]
        recovered: Option<PathBuf>,
        /// Sources CSV (defaults to `<out>/sources.csv`).
        #[arg(long)]
        sources: Option<PathBuf>,
    },
    /// Run a named end-to-end demo.
    Demo {
        #[arg(value_enum)]
        name: DemoName,
    },
    /// MCC over mixing depths for each method, writing `<out>/sweep.csv`.
    Sweep,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DemoName {
    Heart,
    Ar7,
    Mnist,
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(flow) = cli.flow {
        cfg.flow = match flow {
            FlowArg::Wgf => FlowKind::Wgf,
            FlowArg::Rf => FlowKind::Rf,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot build thread pool: {e}")))?;
    }
    let cfg = resolve_config(&cli)?;
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Gen => commands::gen::run(&cfg, &cli.out),
        Command::Mix { input } => commands::mix::run(&cfg, &cli.out, input.as_deref()),
        Command::Demix { input } => commands::demix::run(&cfg, &cli.out, input.as_deref()),
        Command::Apply {
            input,
            models,
            output,
        } => commands::demix::apply(input, models, output),
        Command::Eval { recovered, sources } => {
            commands::eval_cmd::run(&cfg, &cli.out, recovered.as_deref(), sources.as_deref())
        }
        Command::Demo { name } => commands::demo::run(&cfg, &cli.out, *name),
        Command::Sweep => commands::sweep::run(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            logging::log(logging::Level::Error, &err.to_string());
            ExitCode::from(err.exit_code())
        }
    }
}
