//! Benchmark harness: ingest a dataset, train one configuration, run a grid
//! search, and merge finished runs into comparison tables and plots.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stlf::Error;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "stlf-bench", version, about = "Short-term load forecasting benchmark")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for repeats and grid points (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the source, impute, resample and write the cache.
    Ingest,
    /// Train the configured model and score it on the test windows.
    Train,
    /// Grid search on validation; the winner alone is tested.
    Grid,
    /// Merge finished runs into one table and per-day plots.
    Report {
        /// Run directories written by train or grid.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Skip the SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 3,
        Error::Divergence(_) | Error::Autodiff(_) => 4,
    }
}

fn load(cli: &Cli) -> stlf::Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.training.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.training.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> stlf::Result<()> {
    match &cli.command {
        Command::Ingest => commands::ingest(&load(cli)?).map(drop),
        Command::Train => commands::train(&load(cli)?, cli.force).map(drop),
        Command::Grid => commands::grid(&load(cli)?, cli.force).map(drop),
        Command::Report { runs, out, no_plots } => commands::report(runs, out, !no_plots, cli.force).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
