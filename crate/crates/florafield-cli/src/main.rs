//! Command-line front end. Every subcommand maps to one pipeline stage
//! (plus `pipeline` for the full run and `verify` for manifest checks),
//! all operating on a shared run directory.
//!
//! Exit codes: 0 success, 2 configuration problem, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use florafield::pipeline::{
    run_cluster_baseline, run_corrupt, run_eval, run_extract, run_match, run_synthgen,
    run_train, verify_manifest, PipelineConfig, StageRecord,
};
use florafield::{io, Error};

#[derive(Parser)]
#[command(name = "florafield", version, about = "Plant point-cloud segmentation pipeline")]
struct Cli {
    /// Pipeline configuration JSON; built-in defaults fill anything absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration's global seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to all cores
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Run directory holding every stage's inputs and outputs
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic plant scene and render labeled views
    Synthgen,
    /// Inject segmentation errors into the clean views
    Corrupt,
    /// Reconcile per-view instance labels into global IDs
    Match,
    /// Fit the neural field to the matched views
    Train,
    /// Extract a labeled point cloud from the trained field
    Extract,
    /// Score the extracted cloud against the scene
    Eval,
    /// Tuned density-clustering baseline over the same cloud
    ClusterBaseline,
    /// Every stage in order
    Pipeline,
    /// Check that all files in the run manifest are intact
    Verify,
}

enum AppError {
    Config(String),
    Stage(Error),
}

impl AppError {
    /// `Error::Config` means the settings were unusable, not that the stage
    /// broke; keep the two exit codes apart.
    fn from_stage(err: Error) -> Self {
        match err {
            Error::Config(msg) => AppError::Config(msg),
            other => AppError::Stage(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Stage(err)) => {
            eprintln!("stage failed: {err}");
            ExitCode::from(3)
        }
    }
}

fn print_stage(rec: &StageRecord) {
    println!("{:<16} {:>8.2}s  {}", rec.stage, rec.wall_clock_s, rec.summary);
}

fn run(cli: Cli) -> Result<(), AppError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(AppError::Config("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    }

    let mut cfg = match &cli.config {
        Some(path) => io::load_json::<PipelineConfig>(path)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let dir = cli.out.as_path();
    let one = |r: florafield::Result<StageRecord>| -> Result<(), AppError> {
        let rec = r.map_err(AppError::from_stage)?;
        print_stage(&rec);
        Ok(())
    };

    match cli.command {
        Command::Synthgen => one(run_synthgen(dir, &cfg)),
        Command::Corrupt => one(run_corrupt(dir, &cfg)),
        Command::Match => one(run_match(dir, &cfg)),
        Command::Train => one(run_train(dir, &cfg)),
        Command::Extract => one(run_extract(dir, &cfg)),
        Command::Eval => one(run_eval(dir, &cfg)),
        Command::ClusterBaseline => one(run_cluster_baseline(dir, &cfg)),
        Command::Pipeline => {
            one(run_synthgen(dir, &cfg))?;
            one(run_corrupt(dir, &cfg))?;
            one(run_match(dir, &cfg))?;
            one(run_train(dir, &cfg))?;
            one(run_extract(dir, &cfg))?;
            one(run_eval(dir, &cfg))?;
            one(run_cluster_baseline(dir, &cfg))
        }
        Command::Verify => {
            let manifest = verify_manifest(dir).map_err(AppError::from_stage)?;
            let files: usize =
                manifest.stages.iter().map(|s| s.inputs.len() + s.outputs.len()).sum();
            println!("manifest intact: {} stages, {files} file records", manifest.stages.len());
            Ok(())
        }
    }
}
