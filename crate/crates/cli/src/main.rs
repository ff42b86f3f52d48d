//! `cloud-delta` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
//! malformed input, 4 numerical or degenerate input.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] cloud_delta::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(cloud_delta::Error::InvalidConfig(_)) => 2,
            CliError::Core(e) if e.is_format_error() => 3,
            CliError::Core(_) => 4,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Describe(a) => commands::describe(a),
        Command::Align(a) => commands::align(a),
        Command::Detect(a) => commands::detect(a),
        Command::Extract(a) => commands::extract(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Synth(a) => commands::synth(a),
    }
}
