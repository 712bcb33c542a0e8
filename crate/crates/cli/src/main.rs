mod commands;
mod run_config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grasens::Error;

use commands::{EvalArgs, GenerateArgs, InferArgs, InspectArgs, SegmentArgs, TrainArgs};

/// Gabor anti-aliased residual network for WiFi CSI activity recognition.
#[derive(Parser)]
#[command(name = "grasens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labelled synthetic corpus (GCSI traces + manifest.jsonl).
    Generate(GenerateArgs),
    /// Cut the traces of a manifest into windows, written as JSON lines.
    Segment(SegmentArgs),
    /// Train a model and write a self-describing run directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Predict a class for every window of one trace.
    Infer(InferArgs),
    /// Dump the Gabor parameters and synthesized kernels of a checkpoint.
    InspectFilters(InspectArgs),
}

/// Diagnostic kind and process exit code for a library error.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Usage(_) => ("usage", 2),
        Error::Config(_) => ("config", 2),
        Error::Parse { .. } | Error::Truncated { .. } | Error::Json(_) => ("parse", 3),
        Error::Empty(_) => ("data", 3),
        Error::Io { .. } => ("io", 3),
        Error::Divergence { .. } => ("divergence", 4),
    }
}

fn fail(kind: &str, msg: impl std::fmt::Display, code: u8) -> ExitCode {
    let one_line = msg.to_string().replace('\n', " ");
    eprintln!("error[{kind}]: {}", one_line.trim());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    if let Err(msg) = commands::thread_budget() {
        return fail("usage", msg, 2);
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Segment(a) => commands::segment(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::InspectFilters(a) => commands::inspect_filters(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            fail(kind, e, code)
        }
    }
}
