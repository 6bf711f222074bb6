//! `cosd`: topic diagnostics, training, evaluation, prediction, inspection
//! and synthetic data for collaborative stance detection.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{EvalArgs, InspectArgs, PredictArgs, SynthArgs, TopicsArgs, TrainArgs, UsageError};

#[derive(Debug, Parser)]
#[command(name = "cosd", version, about = "Collaborative stance detection over heterogeneous topic graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Perplexity and coherence of per-stance topic models over a range of H.
    Topics(TopicsArgs),
    /// Fit topic models and train CPA trials into a new run directory.
    Train(TrainArgs),
    /// Score a labelled split with a trained run.
    Eval(EvalArgs),
    /// Write stance predictions for a TSV of texts.
    Predict(PredictArgs),
    /// Dump representations, graphs, neighbours, attention or topics.
    Inspect(InspectArgs),
    /// Generate a synthetic corpus with embeddings and ground truth.
    Synth(SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Topics(a) => commands::topics(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", one_line(&format!("{err:#}")));
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Joins a multi-line diagnostic (TOML errors carry a source excerpt).
fn one_line(msg: &str) -> String {
    msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

/// 2 for usage errors and missing input files, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|cause| {
        cause.is::<UsageError>()
            || cause
                .downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::NotFound)
    });
    if usage {
        2
    } else {
        1
    }
}
