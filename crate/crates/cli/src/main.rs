use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unicon_cli::config::{Overrides, PipelineConfig};
use unicon_cli::error::CliResult;
use unicon_cli::{commands, CliError};

/// Behavior-based consumer segmentation pipeline.
#[derive(Debug, Parser)]
#[command(name = "unicon", version)]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory (and UNICON_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Sets a config field, e.g. `--set style.k=6` or `--set style.variant=\"v2\"`.
    #[arg(long = "set", value_name = "PATH=JSON", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic catalog, event log and consumer table.
    GenData,
    /// Build style sequences, holdout clicks and lookalike datasets.
    Prep,
    /// Train the next-item encoder on the style sequences.
    TrainEmbedder,
    /// Extract consumer embeddings with the trained encoder.
    Embed,
    /// Spherical k-means segmentation of the embeddings.
    Cluster,
    /// Embedding-space correlations, cluster sweep and length-scale fit.
    EvalClusters,
    /// Train the lookalike classifier (and optionally compare variants).
    TrainLookalike,
    /// Score evaluation windows and inference sequences.
    Score,
    /// Pick the F2-optimal threshold and extract lookalikes.
    OptimizeThreshold,
    /// Representative items per segment and gender.
    RepItems,
    /// Recommendations for every configured approach.
    Recommend,
    /// Offline evaluation of the recommendation approaches.
    EvalRecs,
    /// Aggregate all reports into report.md.
    Report,
    /// Run every stage in order.
    All,
    /// Print the resolved config and its hash.
    ShowConfig,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::GenData => "gen-data",
            Command::Prep => "prep",
            Command::TrainEmbedder => "train-embedder",
            Command::Embed => "embed",
            Command::Cluster => "cluster",
            Command::EvalClusters => "eval-clusters",
            Command::TrainLookalike => "train-lookalike",
            Command::Score => "score",
            Command::OptimizeThreshold => "optimize-threshold",
            Command::RepItems => "rep-items",
            Command::Recommend => "recommend",
            Command::EvalRecs => "eval-recs",
            Command::Report => "report",
            Command::All | Command::ShowConfig => return None,
        })
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        set: cli.set,
    };
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    match (&cli.command, cli.command.stage()) {
        (_, Some(stage)) => commands::run(stage, &cfg),
        (Command::All, None) => commands::run_all(&cfg),
        _ => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            println!("hash: {}", cfg.hash());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
