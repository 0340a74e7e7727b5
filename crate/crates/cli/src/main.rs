mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, RunConfig};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    match cli.command {
        Command::Train => commands::run_train(&cfg),
        Command::Eval => commands::run_eval(&cfg),
        Command::Forecast => commands::run_forecast(&cfg),
        Command::Synth => commands::run_synth(&cfg),
        Command::Ablate => commands::run_ablate(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("aprnet: error: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
