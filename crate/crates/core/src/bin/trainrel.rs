use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use trainrel::config::RunConfig;
use trainrel::pipeline::{describe_inputs, Command, Run};

/// Transfer reliability pipeline.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the number of journey samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic corpus, labelled transfers and a demo journey.
    SynthGen,
    /// Join runtimes onto raw events and filter them.
    Ingest,
    /// Enumerate transfers from the clean events.
    BuildTransfers,
    /// Fit the transfer model.
    TrainTransfer,
    /// Fit the delay mixture by MCMC.
    TrainDelay,
    /// Sample journey delays and report reliability.
    PredictJourney,
    /// Score both models on held-out events.
    Evaluate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::SynthGen => Command::SynthGen,
            Cmd::Ingest => Command::Ingest,
            Cmd::BuildTransfers => Command::BuildTransfers,
            Cmd::TrainTransfer => Command::TrainTransfer,
            Cmd::TrainDelay => Command::TrainDelay,
            Cmd::PredictJourney => Command::PredictJourney,
            Cmd::Evaluate => Command::Evaluate,
        }
    }
}

fn fail(code: &str, message: String, context: serde_json::Value) -> ExitCode {
    eprintln!("{}", json!({ "code": code, "message": message, "context": context }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);
    let mut config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(e.code(), e.to_string(), json!({ "config": path })),
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(samples) = cli.samples {
        config.samples = samples;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    let run = match Run::new(&config) {
        Ok(r) => r,
        Err(e) => return fail(e.code(), e.to_string(), json!({ "command": command.name() })),
    };

    eprintln!("# trainrel {command} config_hash={}", run.hash);
    match run.config.to_toml() {
        Ok(text) => text.lines().for_each(|l| eprintln!("#   {l}")),
        Err(e) => return fail(e.code(), e.to_string(), json!({ "command": command.name() })),
    }

    match run.execute(command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(
            e.code(),
            e.to_string(),
            json!({ "command": command.name(), "inputs": describe_inputs(&run, command) }),
        ),
    }
}
