//! `sourcebias`: synthesize corpora, measure source bias, train and debias
//! dual encoders, and analyse what debiasing changed.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::Train(a) => commands::train(a),
        Command::SweepAlpha(a) => commands::sweep_alpha(a),
        Command::SweepBeta(a) => commands::sweep_beta(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Parity(a) => commands::parity(a),
        Command::Select(a) => commands::select(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
