//! `kgflow` command line: classification, simulation, profile extraction, phase fits and the
//! semiclassical benches.  Exit codes: 0 ok, 1 runtime abort, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "kgflow", version, about = "Cubic quasi-linear Klein-Gordon lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; all fields optional
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: rayon's choice)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Null-condition verdict, Q coefficients and Phi_1 as JSON
    CheckNull,
    /// Run the solver and write norms.csv and the final snapshot
    Simulate,
    /// Run the solver and write the station series profile.csv
    ExtractProfile,
    /// Fit the log-t phase slope at every station and write fit.csv
    FitScattering,
    /// Moyal remainder scaling, moyal.csv
    MoyalBench,
    /// Operator-norm exponent probe, opnorm.csv
    OpnormBench,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(cli.command, cli.config.as_deref(), &cli.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.inner);
            ExitCode::from(e.code)
        }
    }
}
