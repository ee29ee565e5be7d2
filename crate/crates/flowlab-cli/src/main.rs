mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::CliError;

/// Experiment runner: sampling, inversion, and exemplar-guided editing over
/// analytic velocity fields, emitting CSV/JSON/PGM artifacts.
#[derive(Debug, Parser)]
#[command(name = "flowlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a conditioned flow forward and write the trajectory.
    Sample(config::RunArgs),
    /// Invert a sample back toward noise with a chosen method.
    Invert(config::InvertArgs),
    /// Run an editing pipeline (reinversion or the recon-inv baseline).
    Edit(config::EditArgs),
    /// Alias of `edit --method reinversion`.
    Reinvert(config::EditArgs),
    /// Run a built-in verification suite and print a pass/fail table.
    Verify {
        /// One of: identity, nfe, msd, reformulation, drift, convergence, all.
        suite: String,
    },
    /// Compare the NFE cost of the editing pipelines on one configuration.
    Bench(config::EditArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(args) => commands::cmd_sample(args),
        Command::Invert(args) => commands::cmd_invert(args),
        Command::Edit(args) => commands::cmd_edit(args, None),
        Command::Reinvert(args) => commands::cmd_edit(args, Some("reinversion")),
        Command::Verify { suite } => commands::cmd_verify(&suite),
        Command::Bench(args) => commands::cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
