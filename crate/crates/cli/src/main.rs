//! `codedmm`: bounds, straggler simulation, coded multiplication and
//! application drivers behind one binary.
//!
//! Exit codes: 0 on success, 2 on usage errors (bad flags or config), 1 on
//! runtime errors (unreadable data, undecodable grids). All reports echo
//! the fully resolved configuration; identical flags and seed reproduce
//! identical output except for the timestamp field.

mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use output::Format;

#[derive(Parser)]
#[command(
    name = "codedmm",
    version,
    about = "Local product codes for straggler-resilient matrix multiplication"
)]
struct Cli {
    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bounds, pattern counts and redundancy for a code.
    Bounds(commands::BoundsArgs),
    /// One simulated multiplication of synthetic operands, with timings.
    Simulate(commands::SimulateArgs),
    /// Coded multiply of two matrix files through the simulator.
    Multiply(commands::MultiplyArgs),
    /// Coded matrix-vector product of a matrix file and a vector file.
    Matvec(commands::MatvecArgs),
    /// Application drivers: power-iter, krr, als, svd.
    App(commands::AppArgs),
    /// Brute-force count of undecodable straggler patterns.
    Enumerate(commands::EnumerateArgs),
    /// Peeling-decode plan for a serialized grid manifest.
    Decode(commands::DecodeArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Bounds(args) => commands::bounds(args, cli.format),
        Command::Simulate(args) => commands::simulate(args, cli.format),
        Command::Multiply(args) => commands::multiply(args, cli.format),
        Command::Matvec(args) => commands::matvec(args, cli.format),
        Command::App(args) => commands::app(args, cli.format),
        Command::Enumerate(args) => commands::enumerate(args, cli.format),
        Command::Decode(args) => commands::decode(args, cli.format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
