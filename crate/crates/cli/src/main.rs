// SPDX-License-Identifier: MIT OR Apache-2.0

//! `convoprobe`: dataset construction, evaluation and tinylab experiments.

mod config;
mod failure;
mod lab;
mod manifest;
mod pipeline;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use failure::{Failure, EXIT_OK, EXIT_VALIDATION};
use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "convoprobe", version, about = "Minimal-alteration conversation benchmarks")]
pub struct Cli {
    /// TOML configuration file with one table per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one synthesis prompt per seed conversation.
    EmitSeeds(stages::EmitSeedsArgs),
    /// Generate templated conversations with known world state.
    Synth(stages::SynthArgs),
    /// Turn conversations into original instances with templated questions.
    Questions(stages::QuestionsArgs),
    /// Apply alterations to every original instance.
    Alter(stages::AlterArgs),
    /// Fill gold labels from the oracle; queue the rest for review.
    Label(stages::LabelArgs),
    /// Render a review queue for annotators.
    Review(stages::ReviewArgs),
    /// Query a chat-completions endpoint for every instance.
    Eval(stages::EvalArgs),
    /// Robustness metrics for a dataset and its predictions.
    Metrics(stages::MetricsArgs),
    /// Build the entity-tracking probe set.
    Probe(stages::ProbeArgs),
    /// Check a dataset file.
    Validate(stages::ValidateArgs),
    /// Train the toy model, optionally with regularizers.
    LabTrain(lab::TrainArgs),
    /// Zero-MLP layer sweep.
    LabAblate(lab::AblateArgs),
    /// Residual-patching direct effects.
    LabDe(lab::DeArgs),
    /// Run questions, alter, label, eval and metrics in sequence.
    Run(pipeline::RunArgs),
    /// Re-run a manifest and check its outputs match.
    Replay(pipeline::ReplayArgs),
}

/// What every command sees besides its own arguments.
pub struct Ctx {
    pub args: Vec<String>,
    pub config: ConfigFile,
}

impl Ctx {
    pub fn manifest(&self, subcommand: &str) -> Result<Manifest, Failure> {
        let mut m = Manifest::new(subcommand, &self.args);
        if let Some(p) = &self.config.path {
            m.input(p)?;
        }
        Ok(m)
    }
}

fn parse(args: &[String]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("convoprobe".to_string()).chain(args.iter().cloned()))
}

/// Parses and runs a command line (without the binary name).
pub fn execute(args: Vec<String>) -> Result<(), Failure> {
    let cli = parse(&args).map_err(|e| Failure::validation(e.to_string().trim_end().to_string()))?;
    dispatch(cli, args)
}

fn dispatch(cli: Cli, args: Vec<String>) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Ctx { args, config };
    match cli.command {
        Command::EmitSeeds(a) => stages::emit_seeds(&ctx, a),
        Command::Synth(a) => stages::synth(&ctx, a),
        Command::Questions(a) => stages::questions(&ctx, a),
        Command::Alter(a) => stages::alter(&ctx, a),
        Command::Label(a) => stages::label(&ctx, a),
        Command::Review(a) => stages::review(&ctx, a),
        Command::Eval(a) => stages::eval(&ctx, a),
        Command::Metrics(a) => stages::metrics(&ctx, a),
        Command::Probe(a) => stages::probe(&ctx, a),
        Command::Validate(a) => stages::validate(&ctx, a),
        Command::LabTrain(a) => lab::train(&ctx, a),
        Command::LabAblate(a) => lab::ablate(&ctx, a),
        Command::LabDe(a) => lab::de(&ctx, a),
        Command::Run(a) => pipeline::run(&ctx, a),
        Command::Replay(a) => pipeline::replay(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    match dispatch(cli, args) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code)
        }
    }
}
