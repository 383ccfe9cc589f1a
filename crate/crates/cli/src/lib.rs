//! Command-line harness for the watchdog experiment: synthesize data, train
//! the three networks in order, calibrate the SSIM gate, evaluate guarded
//! against unguarded classification, and score single images.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use watchdog_core::data::netpbm;
use watchdog_core::nn::Model;
use watchdog_core::pipeline::{Pipeline, Verdict};

pub use config::ExperimentConfig;
pub use error::{exit, CliError, CliResult};
pub use manifest::RunManifest;
pub use stages::{Context, Stage};

pub const DEFAULT_OUT: &str = "watchdog-run";

#[derive(Debug, Parser)]
#[command(
    name = "watchdog",
    version,
    about = "Multi-tier out-of-distribution watchdog experiments"
)]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces every seed in the config with one derived from this value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the train, calibration and evaluation datasets.
    SynthData,
    /// Train the autoencoder (tier 1).
    TrainAe,
    /// Choose the tier-1 SSIM threshold on the calibration sets.
    Calibrate,
    /// Generate near-threshold samples against the trained autoencoder.
    GenBoundary,
    /// Train the binary in/out classifier (tier 2).
    TrainBinary,
    /// Train the multi-class core classifier.
    TrainCore,
    /// Compare unguarded, guarded and in-distribution-only classification.
    Evaluate,
    /// Every stage in order.
    Run,
    /// Re-verify every artifact listed in the run manifest.
    Audit,
    /// Run one image through the pipeline and print the verdict as JSON.
    Score(ScoreArgs),
    /// Print the effective config as TOML.
    ShowConfig,
}

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    /// PGM or PPM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Model paths; default to the trained models in the output directory.
    #[arg(long)]
    pub autoencoder: Option<PathBuf>,
    #[arg(long)]
    pub binary: Option<PathBuf>,
    #[arg(long)]
    pub core: Option<PathBuf>,
    /// Tier-1 threshold; defaults to the configured or calibrated one.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ScoreOutput {
    pub image: String,
    pub tau: f64,
    pub tier2_threshold: f64,
    #[serde(flatten)]
    pub verdict: Verdict,
}

fn resolve(cli: &Cli) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    config.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((config, out))
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let (config, out) = resolve(cli)?;
    let single = |stage| Context::open(out.clone(), config.clone(), cli.quiet)?.run(stage);
    match &cli.command {
        Command::SynthData => single(Stage::SynthData),
        Command::TrainAe => single(Stage::TrainAe),
        Command::Calibrate => single(Stage::Calibrate),
        Command::GenBoundary => single(Stage::GenBoundary),
        Command::TrainBinary => single(Stage::TrainBinary),
        Command::TrainCore => single(Stage::TrainCore),
        Command::Evaluate => single(Stage::Evaluate),
        Command::Run => {
            let ctx = Context::open(out, config, cli.quiet)?;
            Stage::ALL.into_iter().try_for_each(|s| ctx.run(s))
        }
        Command::Audit => audit(&out, cli.quiet),
        Command::Score(args) => score(&config, &out, args),
        Command::ShowConfig => {
            print!(
                "{}",
                toml::to_string_pretty(&config).map_err(|e| CliError::Config(e.to_string()))?
            );
            Ok(())
        }
    }
}

fn audit(out: &Path, quiet: bool) -> CliResult<()> {
    let manifest = RunManifest::load(out)?
        .ok_or_else(|| CliError::BadInput(format!("no run manifest in {}", out.display())))?;
    let problems = manifest.audit(out);
    if !problems.is_empty() {
        return Err(CliError::Audit(problems.join("; ")));
    }
    if !quiet {
        let files: usize = manifest.stages.values().map(|s| s.files.len()).sum();
        eprintln!(
            "audit ok: {files} files in {} stages",
            manifest.stages.len()
        );
    }
    Ok(())
}

fn load_model(explicit: &Option<PathBuf>, out: &Path, stage: Stage) -> CliResult<Model> {
    let path = explicit
        .clone()
        .unwrap_or_else(|| out.join(stage.dir()).join(stages::MODEL_FILE));
    if !path.exists() {
        return Err(CliError::MissingStage {
            stage: stage.name(),
            path,
        });
    }
    Ok(Model::load(&path)?)
}

fn score(config: &ExperimentConfig, out: &Path, args: &ScoreArgs) -> CliResult<()> {
    let image = netpbm::read(&args.image)
        .map_err(|e| CliError::BadInput(format!("{}: {e}", args.image.display())))?;
    let p = &config.pipeline;
    let ae = if p.tier1 {
        Some(load_model(&args.autoencoder, out, Stage::TrainAe)?)
    } else {
        None
    };
    let bin = if p.tier2 {
        Some(load_model(&args.binary, out, Stage::TrainBinary)?)
    } else {
        None
    };
    let core = load_model(&args.core, out, Stage::TrainCore)?;
    let mut config = config.clone();
    if args.tau.is_some() {
        config.calibration.tau = args.tau;
    }
    let pc = stages::pipeline_config(&config, out)?;
    let pipeline = Pipeline::new(pc.clone(), ae.as_ref(), bin.as_ref(), &core)?;
    let verdict = pipeline
        .guard(&image)
        .map_err(|e| CliError::BadInput(format!("{}: {e}", args.image.display())))?;
    let output = ScoreOutput {
        image: args.image.display().to_string(),
        tau: pc.tau,
        tier2_threshold: pc.tier2_threshold,
        verdict,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&output).expect("score serializes")
    );
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
