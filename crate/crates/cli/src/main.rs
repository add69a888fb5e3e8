//! `cavity`: simulate, extrapolate, fit and diagnose moving-mirror cavity runs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Options, Settings};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "cavity", version, about = "Particle production in a cavity with moving mirrors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    options: Options,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve the in basis for each cutoff and write one pair table per cutoff.
    Simulate,
    /// Richardson-extrapolate squared magnitudes from a ratio-2 ladder of pair tables.
    Extrapolate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Fit the gray-body model to |beta|^2 or |alpha|^2 of one table.
    Fit { inputs: Vec<PathBuf> },
    /// Thermality function, detailed-balance slope and UV tail exponents.
    Diagnose { inputs: Vec<PathBuf> },
    /// Iterate expand-collapse cycles and report the growth of |beta|.
    Cycles { inputs: Vec<PathBuf> },
    /// Plot-ready table of magnitudes and fitted models.
    Report { inputs: Vec<PathBuf> },
}

fn run(cli: &Cli) -> CliResult<()> {
    let s = Settings::resolve(&cli.options)?;
    match &cli.command {
        Command::Simulate => commands::cmd_simulate(&s).map(drop),
        Command::Extrapolate { inputs } => commands::cmd_extrapolate(&s, inputs).map(drop),
        Command::Fit { inputs } => commands::cmd_fit(&s, inputs).map(drop),
        Command::Diagnose { inputs } => commands::cmd_diagnose(&s, inputs).map(drop),
        Command::Cycles { inputs } => commands::cmd_cycles(&s, inputs).map(drop),
        Command::Report { inputs } => commands::cmd_report(&s, inputs).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
