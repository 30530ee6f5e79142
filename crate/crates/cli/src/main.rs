mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poolrank::{Error, ErrorClass, Result};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "poolrank", version, about = "Re-rank summary candidate pools with a mixture-of-experts model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Reject unknown fields in data files instead of warning.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fill in built-in ROUGE scores.
    Score {
        input: PathBuf,
        /// Metrics to compute (default: every built-in metric in the config).
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Recompute scores already present.
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Oracle, unique-score, identical-pool and correlation reports.
    Stats { input: PathBuf },
    /// Split a dataset into two halves and write a provenance manifest.
    Split { input: PathBuf },
    /// Train the re-ranker and keep the best validation checkpoint.
    Train {
        /// Train on cross-inferred halves described by this manifest.
        #[arg(long, requires_all = ["half_a", "half_b"])]
        split_manifest: Option<PathBuf>,
        #[arg(long)]
        half_a: Option<PathBuf>,
        #[arg(long)]
        half_b: Option<PathBuf>,
    },
    /// Select one candidate per example.
    Rerank {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        /// Precomputed feature file for the input.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a selections file against its dataset.
    Eval {
        #[arg(long)]
        selections: PathBuf,
        input: PathBuf,
        /// Enables the gate-utilization and subsampling reports.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.strict |= common.strict;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    }
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Score {
            input,
            metrics,
            overwrite,
            output,
        } => commands::score(&cfg, &input, &metrics, overwrite, output.as_deref()),
        Command::Stats { input } => commands::stats(&cfg, &input),
        Command::Split { input } => commands::split(&cfg, &input),
        Command::Train {
            split_manifest,
            half_a,
            half_b,
        } => {
            let halves = match (&split_manifest, &half_a, &half_b) {
                (Some(m), Some(a), Some(b)) => Some(commands::HalfSplitInputs {
                    manifest: m,
                    half_a: a,
                    half_b: b,
                }),
                _ => None,
            };
            commands::train_cmd(&cfg, halves)
        }
        Command::Rerank {
            model,
            input,
            features,
            output,
        } => commands::rerank_cmd(&cfg, &model, &input, features.as_deref(), output.as_deref()),
        Command::Eval {
            selections,
            input,
            model,
            features,
        } => commands::eval_cmd(&cfg, &selections, &input, model.as_deref(), features.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Io => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
