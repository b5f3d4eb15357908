use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use windflow_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            return ExitCode::from(code);
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let mut out = std::io::stdout().lock();
    match execute(&cli) {
        Ok(report) => {
            let written = if cli.json {
                writeln!(out, "{}", report.json)
            } else {
                report.human.iter().try_for_each(|line| writeln!(out, "{line}"))
            };
            if written.is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            if cli.json {
                let _ = writeln!(out, "{}", serde_json::json!({"error": e.to_string(), "exit_code": code}));
            }
            eprintln!("error: {e}");
            ExitCode::from(code as u8)
        }
    }
}
