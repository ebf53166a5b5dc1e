//! `mfbo` command-line entry point.

use std::io;
use std::process::ExitCode;

use clap::Parser;
use mfbo::cli::{error_kind, execute, exit_code, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {line}", error_kind(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
