use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = mudaf_lab::cli::Cli::parse();
    match mudaf_lab::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", mudaf_lab::cli::error_json(&err));
            ExitCode::FAILURE
        }
    }
}
