use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use invkit::config::{Backend, RunConfig};
use invkit::error::Error;
use invkit::models::{
    Detector, Embedder, Generator, ModelRegistry, ProcessAdapter, ProcessDetector, ProcessEmbedder, ProcessGenerator,
    SyntheticWorld,
};
use invkit::records::Outcome;
use invkit::Result;

mod commands;
mod targets;

#[derive(Debug, Parser)]
#[command(name = "invkit", version, about = "Latent-space inversion of face-embedding models")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output path, overriding the matching `paths` entry.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen latent codes and write a reusable pool file.
    BuildPool,
    /// Calibrate decision and confidence thresholds for every model.
    Calibrate,
    /// Attack every configured target and write one record per target.
    Attack,
    /// Score attack results under every model and write the report.
    Report,
}

/// Exit status for an error, per the documented table.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid(_)
        | Error::UnknownModel(_)
        | Error::BudgetTooSmall { .. }
        | Error::DimensionMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::GradientUnavailable => 2,
        Error::PoolExhausted { .. } | Error::InsufficientImages | Error::EmptyCalibration => 3,
        Error::Io(_) | Error::FormatVersionMismatch { .. } | Error::ChecksumMismatch(_) | Error::Malformed(_) => 4,
        Error::AllCandidatesFailed => 5,
        _ => 1,
    }
}

/// Models and, for the synthetic backend, the world they came from.
pub(crate) struct Models {
    pub registry: ModelRegistry,
    pub generator_id: String,
    pub detector_id: String,
    pub embedder_ids: Vec<String>,
    pub world: Option<SyntheticWorld>,
}

impl Models {
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        match &cfg.backend {
            Backend::Synthetic => {
                let world = SyntheticWorld::build(&cfg.world, cfg.seed)?;
                Ok(Self {
                    registry: world.registry(),
                    generator_id: world.generator_id().to_string(),
                    detector_id: Detector::id(world.detector.as_ref()).to_string(),
                    embedder_ids: world.embedders.iter().map(|e| e.model_id().to_string()).collect(),
                    world: Some(world),
                })
            }
            Backend::Adapters {
                generator,
                embedders,
                detector,
            } => {
                let spawn = |cmd: &[String]| ProcessAdapter::spawn(&cmd[0], &cmd[1..]);
                let mut registry = ModelRegistry::new();
                let g = Arc::new(ProcessGenerator::new(spawn(generator)?)?);
                let d = Arc::new(ProcessDetector::new(spawn(detector)?)?);
                let generator_id = g.id().to_string();
                let detector_id = d.id().to_string();
                registry.register_generator(g);
                registry.register_detector(d);
                let mut embedder_ids = Vec::new();
                for cmd in embedders {
                    let f = Arc::new(ProcessEmbedder::new(spawn(cmd)?)?);
                    embedder_ids.push(f.model_id().to_string());
                    registry.register_embedder(f);
                }
                Ok(Self {
                    registry,
                    generator_id,
                    detector_id,
                    embedder_ids,
                    world: None,
                })
            }
        }
    }

    pub fn embedder(&self, id: &str) -> Result<Arc<dyn Embedder>> {
        self.registry.embedder(id)
    }
}

pub(crate) fn output_path(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| Error::ConfigInvalid(format!("no output path for the {what}; pass --out or set paths.{what}")))
}

pub(crate) fn input_path<'a>(configured: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    configured
        .as_deref()
        .ok_or_else(|| Error::ConfigInvalid(format!("paths.{what} is not set")))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml_with_env(&text, std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.jobs == 0 {
        return Err(Error::ConfigInvalid("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| Error::ConfigInvalid(format!("cannot start {} workers: {e}", cli.jobs)))?;
    match cli.command {
        Command::BuildPool => commands::build_pool(&cfg, &cli.out),
        Command::Calibrate => commands::calibrate(&cfg, &cli.out),
        Command::Attack => {
            let records = commands::attack(&cfg, &cli.out)?;
            if !records.is_empty() && records.iter().all(|r| matches!(r.outcome, Outcome::Failed { .. })) {
                return Err(Error::AllCandidatesFailed);
            }
            Ok(())
        }
        Command::Report => commands::report(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    match run(&cli) {
        Ok(()) => {
            log::info!("done in {:.2}s", started.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
