//! `latgeo`: batch runs over latent-space geometry. Every subcommand reads a
//! TOML config, writes its results into `--out` together with a resolved copy
//! of the config, and exits with 0 on success, 2 on configuration errors and
//! 3 on numerical failures.

mod commands;
mod config;
mod failure;
mod setup;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Parser)]
#[command(name = "latgeo", version, about = "Geodesics, metric fits and sampling in generator latent spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shortest path between two latent points (graph start, spline refinement).
    Geodesic(RunArgs),
    /// Draw latent codes from the metric-aware density.
    Sample(RunArgs),
    /// Fit an ambient metric to data and write it as JSON.
    FitMetric(RunArgs),
    /// Train an autoencoder and save its decoder as a generator model.
    Train(RunArgs),
    /// Write a synthetic dataset as CSV.
    MakeData(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn run_with<C: RunConfig>(args: &RunArgs, f: impl FnOnce(&C, &Path) -> Result<(), Failure>) -> Result<(), Failure> {
    let cfg: C = config::load(&args.config, args.seed)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", args.out.display())))?;
    config::write_resolved(&cfg, &args.out)?;
    f(&cfg, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Geodesic(a) | Command::Sample(a) | Command::FitMetric(a) | Command::Train(a) | Command::MakeData(a) => a,
    };
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Geodesic(a) => run_with(a, commands::geodesic),
        Command::Sample(a) => run_with(a, commands::sample),
        Command::FitMetric(a) => run_with(a, commands::fit_metric),
        Command::Train(a) => run_with(a, commands::train),
        Command::MakeData(a) => run_with(a, commands::make_data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
