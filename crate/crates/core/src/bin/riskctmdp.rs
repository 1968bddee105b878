use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use riskctmdp::cli::{argument_error_report, run, RunConfig, EXIT_BAD_ARGS};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();

    let config = match RunConfig::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            emit(&argument_error_report(&e.kind().to_string()));
            return ExitCode::from(EXIT_BAD_ARGS as u8);
        }
    };

    let outcome = run(&config);
    if let Some(err) = &outcome.report.error {
        eprintln!("error: {err}");
    }
    for w in &outcome.report.warnings {
        log::warn!("{w}");
    }
    emit(&outcome.report);
    ExitCode::from(outcome.exit_code as u8)
}

/// Writes the report to stdout; a closed pipe is not an error.
fn emit(report: &riskctmdp::cli::Report) {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}
