//! Command-line front end for the attention-RNN dialogue toolkit.

pub mod args;
pub mod commands;
pub mod error;
pub mod files;
pub mod heatmap;
pub mod manifest;

use clap::Parser;

use args::{Cli, Command};
use error::CliResult;

/// Runs one subcommand. `argv` excludes the program name and is recorded
/// verbatim in the run manifest.
pub fn run(argv: &[String]) -> CliResult<()> {
    let cli = Cli::try_parse_from(std::iter::once("arnn".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| error::CliError::Usage(e.to_string()))?;
    dispatch(&cli.command, argv)
}

pub fn dispatch(command: &Command, argv: &[String]) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth(a, argv),
        Command::Prepare(a) => commands::prepare(a, argv),
        Command::Train(a) => commands::train(a, argv),
        Command::Generate(a) => commands::generate(a, argv),
        Command::Eval(a) => commands::eval(a, argv),
        Command::Lda(a) => commands::lda(a, argv),
        Command::Rerank(a) => commands::rerank_cmd(a, argv),
        Command::Tune(a) => commands::tune(a, argv),
        Command::Attviz(a) => commands::attviz(a, argv),
    }
}
