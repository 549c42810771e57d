mod commands;
mod config;
mod error;
mod report;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EmbedArgs, EvalArgs, GradcheckArgs, ReportArgs, SynthArgs, TrainArgs};

/// Weakly supervised multi-output siamese TCN: activity and person
/// representations from pairwise similarity labels.
///
/// Outputs default to directories under $SIAMTCN_OUT_ROOT (or ./runs).
#[derive(Debug, Parser)]
#[command(name = "siamtcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known activity/person/attribute factors.
    Synth(SynthArgs),
    /// Train a model and record a manifest, checkpoint and training log.
    Train(TrainArgs),
    /// Re-evaluate a saved run by clustering its embeddings.
    Eval(EvalArgs),
    /// Export general and per-task embeddings of a saved run.
    Embed(EmbedArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Tabulate metrics of all runs under a directory, with the ablation view.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train_run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Embed(a) => commands::embed(a),
        Command::Gradcheck(a) => commands::gradcheck_run(a),
        Command::Report(a) => commands::report_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
