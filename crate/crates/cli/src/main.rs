mod bundle;
mod commands;
mod error;
mod game;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{replay, run, shapley, wev};

/// Shapley credit assignment for cooperating agents.
#[derive(Debug, Parser)]
#[command(name = "shapcoop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shapley values of a characteristic-function game.
    Shapley(shapley::ShapleyArgs),
    /// Run a batch manifest and write report bundles.
    Run(run::RunArgs),
    /// Weighted-earned-value ranges and reward adjustments.
    Wev(wev::WevArgs),
    /// Counterfactual credit for a recorded trajectory.
    Replay(replay::ReplayArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Shapley(a) => shapley::run(a),
        Command::Run(a) => run::run(a),
        Command::Wev(a) => wev::run(a),
        Command::Replay(a) => replay::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
