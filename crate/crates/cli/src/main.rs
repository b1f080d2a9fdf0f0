use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use edgeforge::{ExperimentConfig, ModelKind, Pipeline, Selection, VariantId};

/// Edge-feature datasets and incremental linear classifiers for
/// textureless object recognition.
#[derive(Debug, Parser)]
#[command(name = "edgeforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Override the work directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Restrict to these dataset variants (repeatable).
    #[arg(long, global = true, value_name = "ID")]
    variant: Vec<VariantId>,

    /// Restrict to these model kinds (repeatable).
    #[arg(long, global = true, value_name = "KIND")]
    model: Vec<ModelKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic scene corpus.
    Synth,
    /// Crop scenes to their objects and write annotations.
    Ingest,
    /// Balance classes with augmented copies.
    Augment,
    /// Build the 15 edge-feature dataset variants.
    BuildDatasets,
    /// Train every selected model on every selected variant.
    Train,
    /// Score trained models on the holdout and alternate sets.
    Evaluate,
    /// Assemble the comparison grid.
    Report,
    /// Run every stage in order.
    RunAll,
}

fn usage_error(kind: ErrorKind, msg: String) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn run(cli: Cli, cfg: ExperimentConfig) -> anyhow::Result<()> {
    let selection = Selection {
        variants: (!cli.variant.is_empty()).then_some(cli.variant),
        models: (!cli.model.is_empty()).then_some(cli.model),
    };
    let pipeline = Pipeline::new(cfg, selection).context("invalid configuration")?;
    let grid = match cli.command {
        Command::Synth => pipeline.synth().context("synth failed").map(|_| None)?,
        Command::Ingest => pipeline.ingest().context("ingest failed").map(|_| None)?,
        Command::Augment => pipeline.augment().context("augment failed").map(|_| None)?,
        Command::BuildDatasets => pipeline.build_datasets().context("build-datasets failed").map(|_| None)?,
        Command::Train => pipeline.train().context("train failed").map(|_| None)?,
        Command::Evaluate => pipeline.evaluate().context("evaluate failed").map(|_| None)?,
        Command::Report => Some(pipeline.report().context("report failed")?),
        Command::RunAll => Some(pipeline.run_all().context("run-all failed")?),
    };
    if let Some(grid) = grid {
        print!("{}", grid.summary());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EDGEFORGE_LOG", "info")).init();

    let Some(path) = cli.config.clone() else {
        usage_error(ErrorKind::MissingRequiredArgument, "--config <PATH> is required".into());
    };
    if !path.is_file() {
        usage_error(ErrorKind::InvalidValue, format!("config file {} not found", path.display()));
    }
    if cli.jobs == Some(0) {
        usage_error(ErrorKind::InvalidValue, "--jobs must be at least 1".into());
    }

    let cfg = match ExperimentConfig::load(&path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    if let Some(out) = &cli.out {
        cfg.work_dir = out.clone();
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n);
    }
    let result = pool
        .build()
        .context("cannot start worker pool")
        .and_then(|pool| pool.install(|| run(cli, cfg)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
