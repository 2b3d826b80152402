//! `afford`: headless driving runs, dataset recording, training, evaluation,
//! replay and the live WebSocket service.

mod common;
mod drive;
mod evaluate;
mod failure;
mod protocol;
mod record;
mod replay;
mod serve;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "afford", version, about = "Direct-perception highway driving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-loop run; writes a trajectory log and a report.
    Drive(drive::DriveArgs),
    /// Record labeled frames from a human client or the autonomous driver.
    Record(record::RecordArgs),
    /// Train the raster regressor on recorded frames.
    Train(train::TrainArgs),
    /// Report errors for a model, a paired log, or a trajectory log.
    Eval(evaluate::EvalArgs),
    /// Re-drive a recording and check the trajectory is reproduced.
    Replay(replay::ReplayArgs),
    /// Run the live simulation over WebSocket.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Drive(a) => drive::run(a),
        Command::Record(a) => record::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => evaluate::run(a),
        Command::Replay(a) => replay::run(a),
        Command::Serve(a) => serve::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
