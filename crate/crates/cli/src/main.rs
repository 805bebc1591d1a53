//! `arcube` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 unreachable pose or
//! infeasible design, 3 validation failure.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

/// Caps the worker pool size; 0 or unset means one worker per core.
const THREADS_ENV: &str = "ARCUBE_THREADS";

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Ik(a) => commands::ik(a),
        Command::Profile(a) => commands::profile(a),
        Command::Validate(a) => commands::validate(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Synth(a) => commands::synth(a),
        Command::Preset(a) => commands::preset(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
