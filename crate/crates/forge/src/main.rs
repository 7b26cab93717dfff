use std::path::PathBuf;
use std::process::ExitCode;

use cdm_forge::commands;
use cdm_forge::{ForgeError, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Few-shot conditional latent diffusion on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "cdm-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file, or one of the preset names `default`, `one-shot`, `three-shot`.
    #[arg(long, default_value = "default")]
    config: PathBuf,
    /// Override one key, e.g. `--set seed=3`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset and the seen/unseen split.
    SynthData(Common),
    /// Train the feature extractor on seen classes.
    TrainExtractor(Common),
    /// Build or train the latent autoencoder.
    TrainAe(Common),
    /// Compute seen-class feature statistics.
    Stats(Common),
    /// Train the conditional denoiser.
    TrainLdm(Common),
    /// Calibrate unseen-class distributions from K-shot supports.
    Calibrate(Common),
    /// Refine calibrated distributions through the frozen denoiser.
    Invert(Common),
    /// Sample unseen-class items.
    Generate(Common),
    /// Compute Fréchet, diversity and few-shot metrics.
    Evaluate(Common),
    /// Run every stage in order.
    RunExperiment(Common),
    /// Compare generation with and without inversion.
    AblateInversion(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::SynthData(c) => (commands::SYNTH, c),
            Command::TrainExtractor(c) => (commands::EXTRACTOR, c),
            Command::TrainAe(c) => (commands::AUTOENCODER, c),
            Command::Stats(c) => (commands::STATS, c),
            Command::TrainLdm(c) => (commands::LDM, c),
            Command::Calibrate(c) => (commands::CALIBRATE, c),
            Command::Invert(c) => (commands::INVERT, c),
            Command::Generate(c) => (commands::GENERATE, c),
            Command::Evaluate(c) => (commands::EVALUATE, c),
            Command::RunExperiment(c) => (commands::RUN, c),
            Command::AblateInversion(c) => (commands::ABLATE, c),
        }
    }
}

fn execute(name: &str, common: &Common) -> Result<PathBuf, ForgeError> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_overrides(&common.overrides)?;
    commands::run(name, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.split();
    match execute(name, common) {
        Ok(dir) => {
            println!("{name}: wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
