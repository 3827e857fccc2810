use std::process::ExitCode;

use clap::Parser;
use ttd_cli::{dispatch, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TTD_LOG", "error")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("ttd: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
