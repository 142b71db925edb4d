//! `riskineq` command-line interface.

mod cli;
mod commands;
mod error;
mod output;
mod pipeline;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use cli::{Cli, Command, MeasureCommand};
use error::CliResult;

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit_command(&a),
        Command::Measure(MeasureCommand::BetaTable(a)) => commands::beta_table_command(&a),
        Command::Measure(MeasureCommand::Posterior(a)) => commands::posterior_measure_command(&a),
        Command::Compare(a) => commands::compare_command(&a),
        Command::Adjust(a) => commands::adjust_command(&a),
        Command::Decompose(a) => commands::decompose_command(&a),
        Command::Anova(a) => commands::anova_command(&a),
        Command::Pipeline(a) => pipeline::run(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
