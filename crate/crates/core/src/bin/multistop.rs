use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use multistop::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = cli.command.into_config();
    let outcome = run(&config);
    if let Some(msg) = &outcome.message {
        eprintln!("error: {msg}");
    }
    if !outcome.report.is_empty() {
        let written = match &config.args.out {
            Some(path) => std::fs::write(path, &outcome.report),
            None => std::io::stdout().write_all(outcome.report.as_bytes()),
        };
        if let Err(e) = written {
            eprintln!("error: cannot write report: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(outcome.code as u8)
}
