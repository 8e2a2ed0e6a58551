use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use craft_core::evalkit::Toggle;
use craft_core::numerics::Precision;

use crate::bundle::IngestMeta;
use crate::commands::{
    cmd_ablate, cmd_bench, cmd_evaluate, cmd_ingest, cmd_split, cmd_train, load_grid, Baseline,
    EvalRequest, EvalSplit,
};
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "craft",
    version,
    about = "Future link prediction on temporal graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a raw `src,dst,t` file and write a dataset bundle.
    Ingest {
        edge_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML sidecar with `bipartite` and optional partition sizes.
        #[arg(long, conflicts_with = "bipartite")]
        meta: Option<PathBuf>,
        #[arg(long)]
        bipartite: bool,
    },
    /// Write the split manifest and fixed evaluation negatives.
    Split(Shared),
    /// Train with early stopping and keep the best checkpoint.
    Train(Shared),
    /// Rank the validation or test queries with a checkpoint or a baseline.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: EvalSplit,
        /// Negatives per query; defaults to `model.q_eval`.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        baseline: Option<Baseline>,
    },
    /// Train the base config plus one variant per disabled component.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_delimiter = ',', default_value = "pos-enc,elapsed,repeat")]
        toggles: Vec<Toggle>,
    },
    /// Time neighbor extraction and scoring over a grid; writes bench.csv.
    Bench {
        /// TOML grid; the built-in grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Shared {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Dataset bundle directory, overriding the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Override any config field, e.g. `--set model.dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Shared {
    pub fn load(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            precision: self.precision,
            dataset: self.dataset.clone(),
            set: self.set.clone(),
        };
        RunConfig::load(&self.config, &overrides)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            edge_file,
            out,
            meta,
            bipartite,
        } => {
            let meta = match meta {
                Some(path) => IngestMeta::load(&path)?,
                None => IngestMeta {
                    bipartite,
                    ..IngestMeta::default()
                },
            };
            let m = cmd_ingest(&edge_file, &meta, &out)?;
            println!(
                "ingested {} edges over {} nodes into {} (checksum {})",
                m.num_edges,
                m.num_nodes,
                out.display(),
                m.checksum
            );
        }
        Command::Split(shared) => {
            let s = cmd_split(&shared.load()?)?;
            let m = &s.manifest;
            println!(
                "train {:?} validation {:?} test {:?}; {} validation and {} test queries",
                m.train, m.validation, m.test, s.validation_queries, s.test_queries
            );
        }
        Command::Train(shared) => {
            let s = cmd_train(&shared.load()?)?;
            println!(
                "best epoch {} of {}: validation MRR {:.4}; checkpoint {}",
                s.best_epoch,
                s.epochs,
                s.best_val_mrr,
                s.checkpoint.display()
            );
        }
        Command::Evaluate {
            shared,
            checkpoint,
            split,
            q,
            baseline,
        } => {
            let req = EvalRequest {
                checkpoint: checkpoint.as_deref(),
                split,
                q,
                baseline,
            };
            let (out, wall_ms) = cmd_evaluate(&shared.load()?, &req)?;
            println!(
                "{} {} MRR {:.4} over {} queries ({} cold sources skipped)",
                out.scorer,
                split.name(),
                out.mrr,
                out.queries,
                out.skipped
            );
            eprintln!("evaluation took {wall_ms} ms");
        }
        Command::Ablate { shared, toggles } => {
            let out = cmd_ablate(&shared.load()?, &toggles)?;
            for row in &out.table.rows {
                println!(
                    "{:<12} best epoch {:>3}  val {:.4}  test {:.4}  delta {:+.4}",
                    row.variant, row.best_epoch, row.val_mrr, row.test_mrr, row.delta
                );
            }
        }
        Command::Bench { grid, seed, out } => {
            let mut grid = load_grid(grid.as_deref())?;
            if let Some(seed) = seed {
                grid.seed = seed;
            }
            let rows = cmd_bench(&grid, &out)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                out.join("bench.csv").display()
            );
        }
    }
    Ok(())
}
