mod commands;
mod config;
mod error;
mod http;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigFile;

/// Train and apply an extractive prompt compressor.
#[derive(Debug, Parser)]
#[command(name = "promptpress", version)]
struct Cli {
    /// `key = value` defaults; flags override them.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress documents chunk by chunk with a chat model.
    Distill(commands::DistillArgs),
    /// Label original words as kept or dropped.
    Annotate(commands::AnnotateArgs),
    /// Score annotation quality and filter the worst documents.
    Qc(commands::QcArgs),
    /// Fit the word scorer on annotations.
    Train(commands::TrainArgs),
    /// Compute per-word preserve probabilities.
    Score(commands::ScoreArgs),
    /// Keep the highest-scoring words of each document.
    Compress(commands::CompressArgs),
    /// Summarize pipeline outputs as CSV.
    Stats(commands::StatsArgs),
}

fn run(cli: &Cli) -> error::CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Distill(a) => commands::distill(&cfg, a),
        Command::Annotate(a) => commands::annotate_cmd(&cfg, a),
        Command::Qc(a) => commands::qc(&cfg, a),
        Command::Train(a) => commands::train_cmd(&cfg, a),
        Command::Score(a) => commands::score(&cfg, a),
        Command::Compress(a) => commands::compress(&cfg, a),
        Command::Stats(a) => commands::stats(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
