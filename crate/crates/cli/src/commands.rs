use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use craft_core::dataprep::{NegativeCache, SplitManifest};
use craft_core::evalkit::{
    bench_complexity, evaluate, run_ablation, write_bench_csv, AblationTable, BenchGrid, BenchRow,
    EdgeBank, EvalReport, Toggle,
};
use craft_core::model::{Checkpoint, CheckpointHeader};
use craft_core::numerics::{Precision, Real};
use craft_core::pipeline::{evaluate_model, fit, EpochRecord, Prepared};
use serde::{Deserialize, Serialize};

use crate::bundle::{ingest, Bundle, BundleMeta, IngestMeta};
use crate::config::RunConfig;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

pub fn cmd_ingest(edge_file: &Path, meta: &IngestMeta, out: &Path) -> Result<BundleMeta> {
    ingest(edge_file, meta, out)
}

/// A loaded bundle together with the resolved run settings.
struct Run {
    config: RunConfig,
    seed: u64,
    bundle: Bundle,
    fingerprint: String,
}

impl Run {
    fn open(config: &RunConfig) -> Result<Self> {
        let seed = config.seed()?;
        let bundle = Bundle::load(&config.dataset)
            .with_context(|| format!("loading dataset bundle {}", config.dataset.display()))?;
        let fingerprint = config.fingerprint(&bundle.meta.checksum)?;
        Ok(Self {
            config: config.clone(),
            seed,
            bundle,
            fingerprint,
        })
    }

    fn prepare(&self, q: usize) -> Result<Prepared> {
        Ok(Prepared::new(
            self.bundle.edges.clone(),
            self.bundle.meta.graph_meta(),
            &self.config.split,
            self.seed,
            q,
        )?)
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let out = config.out_dir()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Writes through a temporary sibling so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitOutput {
    pub manifest: SplitManifest,
    pub config_fingerprint: String,
    pub validation_queries: usize,
    pub test_queries: usize,
}

/// Writes `split.json` and the fixed evaluation negatives `negatives.bin`.
pub fn cmd_split(config: &RunConfig) -> Result<SplitOutput> {
    let run = Run::open(config)?;
    let out = out_dir(config)?;
    let q = config.model.q_eval;
    let data = run.prepare(q)?;
    let manifest = SplitManifest::new(
        config.split,
        &data.bounds,
        &run.bundle.meta.checksum,
        run.seed,
        q,
    );
    let cache = NegativeCache {
        seed: run.seed,
        validation: data.validation,
        test: data.test,
    };
    let mut bytes = Vec::new();
    cache.write_to(&mut bytes)?;
    write_atomic(&out.join("negatives.bin"), &bytes)?;
    let output = SplitOutput {
        manifest,
        config_fingerprint: run.fingerprint,
        validation_queries: cache.validation.len(),
        test_queries: cache.test.len(),
    };
    write_json(&out.join("split.json"), &output)?;
    Ok(output)
}

/// The resolved configuration of a training run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub config_fingerprint: String,
    pub dataset_checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsLine {
    #[serde(flatten)]
    pub record: EpochRecord,
    pub seed: u64,
    pub config_fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimingLine {
    pub epoch: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: u64,
    pub best_val_mrr: f64,
    pub epochs: u64,
    pub checkpoint: PathBuf,
    pub config_fingerprint: String,
}

/// Trains with early stopping. Writes `run.json`, one `metrics.jsonl` line
/// per epoch (flushed as it goes), wall times to `timing.jsonl`, and the
/// best checkpoint to `checkpoint.ckpt`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    match config.precision {
        Precision::Single => train_with::<f32>(config),
        Precision::Double => train_with::<f64>(config),
    }
}

fn train_with<T: Real>(config: &RunConfig) -> Result<TrainSummary> {
    let run = Run::open(config)?;
    let out = out_dir(config)?;
    let data = run.prepare(config.model.q_eval)?;
    write_json(
        &out.join("run.json"),
        &RunRecord {
            config: config.clone(),
            seed: run.seed,
            config_fingerprint: run.fingerprint.clone(),
            dataset_checksum: run.bundle.meta.checksum.clone(),
        },
    )?;
    let mut metrics = File::create(out.join(METRICS_FILE))?;
    let mut timing = File::create(out.join(TIMING_FILE))?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let checksum = run.bundle.meta.checksum.clone();
    let (seed, fingerprint) = (run.seed, run.fingerprint.clone());
    let num_nodes = data.index.num_nodes();
    let model_config = config.model.clone();

    let mut hook = |record: &EpochRecord, improved: bool, wall: std::time::Duration, store: &_| {
        let line = MetricsLine {
            record: record.clone(),
            seed,
            config_fingerprint: fingerprint.clone(),
        };
        let io = |e: serde_json::Error| std::io::Error::other(e);
        writeln!(metrics, "{}", serde_json::to_string(&line).map_err(io)?)?;
        metrics.flush()?;
        let wall_ms = wall.as_millis() as u64;
        writeln!(
            timing,
            "{}",
            serde_json::to_string(&TimingLine {
                epoch: record.epoch,
                wall_ms
            })
            .map_err(io)?
        )?;
        if improved {
            let model =
                craft_core::model::CraftModel::bind(model_config.clone(), num_nodes, store)?;
            let ckpt = Checkpoint::new(&model, store, &checksum, &fingerprint, seed, record.epoch);
            let bytes = ckpt.to_bytes()?;
            write_atomic(&checkpoint_path, &bytes)
                .map_err(|e| std::io::Error::other(format!("{e:#}")))?;
        }
        Ok(())
    };
    let result = fit::<T>(
        config.model.clone(),
        &data,
        &config.training,
        run.seed,
        &mut hook,
    )
    .context("training aborted")?;
    Ok(TrainSummary {
        best_epoch: result.best_epoch,
        best_val_mrr: result.best_val_mrr,
        epochs: result.history.len() as u64,
        checkpoint: checkpoint_path,
        config_fingerprint: run.fingerprint,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Validation,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        }
    }
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validation" | "val" => Ok(EvalSplit::Validation),
            "test" => Ok(EvalSplit::Test),
            other => Err(format!("unknown split {other:?} (validation, test)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Edgebank,
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edgebank" => Ok(Baseline::Edgebank),
            other => Err(format!("unknown baseline {other:?} (edgebank)")),
        }
    }
}

/// Contents of `eval_<split>.json`. Wall time is reported on stderr only so
/// that equal fingerprints give identical files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub scorer: String,
    pub split: EvalSplit,
    pub q: usize,
    pub seed: u64,
    pub config_fingerprint: String,
    pub mrr: f64,
    pub queries: usize,
    pub skipped: usize,
    pub ranks: Vec<usize>,
}

pub struct EvalRequest<'a> {
    pub checkpoint: Option<&'a Path>,
    pub split: EvalSplit,
    pub q: Option<usize>,
    pub baseline: Option<Baseline>,
}

/// Evaluates a checkpoint, or a baseline, on the fixed queries of a split.
/// A checkpoint trained on a different dataset is rejected before anything
/// is written.
pub fn cmd_evaluate(config: &RunConfig, req: &EvalRequest) -> Result<(EvalOutput, u64)> {
    let run = Run::open(config)?;
    let checkpoint = match (req.checkpoint, req.baseline) {
        (Some(path), None) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let header = CheckpointHeader::from_bytes(&bytes)?;
            if header.dataset_checksum != run.bundle.meta.checksum {
                bail!(
                    "checkpoint {} was trained on dataset {} but {} has checksum {}",
                    path.display(),
                    header.dataset_checksum,
                    config.dataset.display(),
                    run.bundle.meta.checksum
                );
            }
            Some((header, bytes))
        }
        (None, Some(_)) => None,
        (Some(_), Some(_)) => bail!("pass either --checkpoint or --baseline, not both"),
        (None, None) => bail!("nothing to evaluate: pass --checkpoint or --baseline"),
    };
    let q = req.q.unwrap_or(config.model.q_eval);
    ensure!(q >= 1, "q must be >= 1");
    let data = run.prepare(q)?;
    let queries = match req.split {
        EvalSplit::Validation => &data.validation,
        EvalSplit::Test => &data.test,
    };
    let batch = config.training.eval_batch_size;
    let (scorer, fingerprint, report): (String, String, EvalReport) = match checkpoint {
        Some((header, bytes)) => {
            let report = match header.precision {
                Precision::Single => eval_checkpoint::<f32>(
                    &bytes,
                    &data,
                    queries,
                    batch,
                    &header.config_fingerprint,
                )?,
                Precision::Double => eval_checkpoint::<f64>(
                    &bytes,
                    &data,
                    queries,
                    batch,
                    &header.config_fingerprint,
                )?,
            };
            ("craft".into(), header.config_fingerprint, report)
        }
        None => {
            let report = evaluate(&EdgeBank, &data.index, queries, batch, &run.fingerprint)?;
            ("edgebank".into(), run.fingerprint.clone(), report)
        }
    };
    let output = EvalOutput {
        scorer: scorer.clone(),
        split: req.split,
        q,
        seed: run.seed,
        config_fingerprint: fingerprint,
        mrr: report.mrr,
        queries: report.queries,
        skipped: report.skipped,
        ranks: report.ranks,
    };
    let out = out_dir(config)?;
    let name = match scorer.as_str() {
        "craft" => format!("eval_{}.json", req.split.name()),
        other => format!("eval_{}_{other}.json", req.split.name()),
    };
    write_json(&out.join(name), &output)?;
    Ok((output, report.wall_ms))
}

fn eval_checkpoint<T: Real>(
    bytes: &[u8],
    data: &Prepared,
    queries: &[craft_core::dataprep::RankingQuery],
    batch: usize,
    fingerprint: &str,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::<T>::from_bytes(bytes)?;
    let model = ckpt.model()?;
    ensure!(
        model.num_nodes == data.index.num_nodes(),
        "checkpoint covers {} nodes, dataset has {}",
        model.num_nodes,
        data.index.num_nodes()
    );
    Ok(evaluate_model(
        &model,
        &ckpt.store,
        data,
        queries,
        batch,
        fingerprint,
    )?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationOutput {
    pub config_fingerprint: String,
    #[serde(flatten)]
    pub table: AblationTable,
}

/// Trains the base configuration and each toggled variant with the same
/// seed; writes `ablation.json`.
pub fn cmd_ablate(config: &RunConfig, toggles: &[Toggle]) -> Result<AblationOutput> {
    let run = Run::open(config)?;
    let out = out_dir(config)?;
    let data = run.prepare(config.model.q_eval)?;
    let table = match config.precision {
        Precision::Single => {
            run_ablation::<f32>(&config.model, &data, &config.training, run.seed, toggles)?
        }
        Precision::Double => {
            run_ablation::<f64>(&config.model, &data, &config.training, run.seed, toggles)?
        }
    };
    let output = AblationOutput {
        config_fingerprint: run.fingerprint,
        table,
    };
    write_json(&out.join("ablation.json"), &output)?;
    Ok(output)
}

/// Runs the complexity grid and writes `bench.csv` into `out`.
pub fn cmd_bench(grid: &BenchGrid, out: &Path) -> Result<Vec<BenchRow>> {
    let rows = bench_complexity(grid)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(File::create(out.join("bench.csv"))?);
    write_bench_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(rows)
}

pub fn load_grid(path: Option<&Path>) -> Result<BenchGrid> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(BenchGrid::default()),
    }
}
