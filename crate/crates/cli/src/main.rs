use std::process::ExitCode;

use chakra_core::sim::SimError;
use clap::error::ErrorKind;
use clap::Parser;

mod args;
mod commands;

use args::Cli;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DEADLOCK: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let deadlock = e.chain().any(|c| matches!(c.downcast_ref::<SimError>(), Some(SimError::Deadlock(_))));
            ExitCode::from(if deadlock { EXIT_DEADLOCK } else { EXIT_DATA })
        }
    }
}
