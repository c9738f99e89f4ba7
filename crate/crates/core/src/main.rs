use std::process::ExitCode;

use clap::Parser;
use odelab::cli::{self, Cli, CliError};

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_PASS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = cli::configure_threads().and_then(|_| cli::run(parsed));
    match result {
        Ok(outcome) => ExitCode::from(outcome.code as u8),
        Err(e) => {
            eprintln!("{e}");
            let code = match e {
                CliError::Usage(_) => cli::EXIT_USAGE,
                CliError::Runtime(_) => cli::EXIT_FAIL,
            };
            ExitCode::from(code as u8)
        }
    }
}
