mod commands;
mod options;

use std::process::ExitCode;

use clap::Parser;

use options::Cli;

/// Failures surfaced to the operator, each mapped to a stable exit code.
#[derive(Debug)]
pub enum CliError {
    Lib(lvnet::Error),
    /// Invalid flags or inconsistent inputs.
    Usage(String),
}

impl From<lvnet::Error> for CliError {
    fn from(e: lvnet::Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(lvnet::Error::Numeric(_)) => 3,
            CliError::Lib(lvnet::Error::Io { .. }) => 1,
            CliError::Lib(_) => 2,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn configure_threads(sequential: bool) -> CliResult {
    let threads = if sequential {
        Some(1)
    } else {
        match std::env::var("LVNET_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| CliError::Usage(format!("LVNET_THREADS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.sequential).and_then(|()| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
