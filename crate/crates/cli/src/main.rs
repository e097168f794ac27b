use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use exinnov_cli::{run, Cli, ErrorRecord};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let (stdout, failure) = match run(cli) {
        Ok(o) => (o.stdout, o.failure),
        Err(e) => (String::new(), Some(e)),
    };
    let _ = std::io::stdout().write_all(stdout.as_bytes());
    match failure {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("{}", ErrorRecord::from_error(&e).to_json());
            ExitCode::FAILURE
        }
    }
}
