//! `patchformer` command-line runner.

mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "patchformer", version, about = "Spatial-temporal EEG patch transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic attention dataset.
    Synth(commands::SynthCmd),
    /// Downsample and window recordings into a segment file.
    Preprocess(commands::PreprocessCmd),
    /// Train one model, optionally holding out a subject for testing.
    Train(commands::TrainCmd),
    /// Score a checkpoint on a segment file.
    Eval(commands::EvalCmd),
    /// Leave-one-subject-out cross-validation.
    Loso(commands::LosoCmd),
    /// LOSO runs of architecture variants.
    Ablate(commands::AblateCmd),
    /// LOSO runs over temporal patch lengths.
    Sweep(commands::SweepCmd),
    /// Finite-difference check of every kernel and the full network.
    Gradcheck(commands::GradcheckCmd),
    /// Re-run the command recorded in a manifest.
    Replay(commands::ReplayCmd),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Loso(_) => "loso",
            Command::Ablate(_) => "ablate",
            Command::Sweep(_) => "sweep",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }

    /// Points every output of the command into `dir`.
    pub fn redirect(&mut self, dir: PathBuf) {
        let file_in = |p: &PathBuf| dir.join(p.file_name().unwrap_or_default());
        match self {
            Command::Synth(c) => c.out = file_in(&c.out),
            Command::Preprocess(c) => c.out = file_in(&c.out),
            Command::Train(c) => c.out_dir = dir,
            Command::Eval(c) => c.out_dir = Some(dir),
            Command::Loso(c) => c.out_dir = dir,
            Command::Ablate(c) => c.out_dir = dir,
            Command::Sweep(c) => c.out_dir = dir,
            Command::Gradcheck(c) => c.out_dir = Some(dir),
            Command::Replay(_) => {}
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
