use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataprep::QueryBatch;
use crate::model::{CraftModel, ModelConfig};
use crate::numerics::{gemm, DenseArray, MatMut, ParamStore};
use crate::seeding::{stream_rng, Stream};
use crate::tgstore::{GraphMeta, NeighborIndex, TemporalEdge};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchGrid {
    /// Degrees of the hub node for the extraction benchmark.
    pub degrees: Vec<usize>,
    /// Neighbor counts for the scoring benchmark (at `fixed_q`).
    pub ks: Vec<usize>,
    /// Negative counts for the scoring benchmark (at `fixed_k`).
    pub qs: Vec<usize>,
    pub fixed_k: usize,
    pub fixed_q: usize,
    pub dim: usize,
    pub batch: usize,
    pub lookups: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            degrees: vec![1_000, 10_000, 100_000, 1_000_000],
            ks: vec![8, 16, 32, 64],
            qs: vec![25, 50, 100, 200, 400],
            fixed_k: 30,
            fixed_q: 100,
            dim: 64,
            batch: 16,
            lookups: 20_000,
            repeats: 7,
            seed: 0,
        }
    }
}

impl BenchGrid {
    fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidGrid(m.to_string()));
        if self.ks.contains(&0) || self.fixed_k == 0 {
            return bad("k must be >= 1");
        }
        if self.qs.contains(&0) || self.fixed_q == 0 {
            return bad("q must be >= 1");
        }
        if self.degrees.contains(&0) {
            return bad("degree must be >= 1");
        }
        if self.repeats == 0 || self.batch == 0 || self.lookups == 0 || self.dim == 0 {
            return bad("repeats, batch, lookups and dim must be >= 1");
        }
        Ok(())
    }
}

/// One timing row; times are nanoseconds per unit of work (one lookup for
/// extraction, one batch for scoring).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub knob: String,
    pub value: usize,
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p95_ns: f64,
    pub repeats: usize,
}

fn summarize(knob: &str, value: usize, mut samples: Vec<f64>) -> BenchRow {
    samples.sort_by(f64::total_cmp);
    let pick = |p: f64| samples[((samples.len() - 1) as f64 * p).round() as usize];
    BenchRow {
        knob: knob.to_string(),
        value,
        mean_ns: samples.iter().sum::<f64>() / samples.len() as f64,
        p50_ns: pick(0.5),
        p95_ns: pick(0.95),
        repeats: samples.len(),
    }
}

const HUB_PEERS: u32 = 1_000;

fn extraction_row(grid: &BenchGrid, degree: usize) -> Result<BenchRow, EvalError> {
    let edges: Vec<TemporalEdge> = (0..degree)
        .map(|i| TemporalEdge::new(0, 1 + (i as u32 % HUB_PEERS), i as u64 + 1, i))
        .collect();
    let index = NeighborIndex::build(&edges, GraphMeta::homogeneous(HUB_PEERS as usize + 1))?;
    drop(edges);
    let mut rng = stream_rng(grid.seed, Stream::Bench, degree as u64, 0);
    let times: Vec<u64> = (0..grid.lookups)
        .map(|_| rng.gen_range(1..=degree as u64 + 1))
        .collect();
    let mut samples = Vec::with_capacity(grid.repeats);
    for _ in 0..grid.repeats {
        let start = Instant::now();
        let mut acc = 0usize;
        for &t in &times {
            acc += black_box(index.recent_neighbors(0, t, grid.fixed_k)).len();
        }
        black_box(acc);
        samples.push(start.elapsed().as_nanos() as f64 / grid.lookups as f64);
    }
    Ok(summarize("extract_degree", degree, samples))
}

const SCORE_NODES: u32 = 1_000;

fn synthetic_batch(grid: &BenchGrid, k: usize, q: usize) -> QueryBatch {
    let mut rng = stream_rng(grid.seed, Stream::Bench, k as u64, q as u64);
    let b = grid.batch;
    let j = 1 + q;
    QueryBatch {
        k,
        num_candidates: j,
        sources: (0..b).map(|_| rng.gen_range(0..SCORE_NODES)).collect(),
        times: vec![1_000_000; b],
        neighbors: (0..b * k).map(|_| rng.gen_range(0..SCORE_NODES)).collect(),
        neighbor_times: (0..b * k).map(|_| rng.gen_range(0..1_000_000)).collect(),
        mask: vec![false; b * k],
        candidates: (0..b * j).map(|_| rng.gen_range(0..SCORE_NODES)).collect(),
        elapsed: (0..b * j).map(|_| Some(rng.gen_range(0..10_000))).collect(),
        repeats: None,
    }
}

fn time_it(repeats: usize, mut f: impl FnMut()) -> Vec<f64> {
    f();
    (0..repeats)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos() as f64
        })
        .collect()
}

fn scoring_rows(
    grid: &BenchGrid,
    knob: &str,
    value: usize,
    k: usize,
    q: usize,
) -> Result<[BenchRow; 2], EvalError> {
    let config = ModelConfig {
        dim: grid.dim,
        neighbors: k,
        q_eval: q,
        ..ModelConfig::default()
    };
    let (model, store): (CraftModel, ParamStore<f32>) =
        CraftModel::init(config, SCORE_NODES as usize, grid.seed)?;
    let batch = synthetic_batch(grid, k, q);
    let mut result = Ok(());
    let craft = time_it(grid.repeats, || {
        if let Err(e) = model.score(&store, &batch) {
            result = Err(e);
        }
    });
    result?;

    // Reference cost of aggregating the k neighbors separately for every
    // candidate: one (1+q)k x F by F x F product per query.
    let f = grid.dim;
    let rows = (1 + q) * k;
    let x = DenseArray::<f32>::from_fn(rows, f, |r, c| ((r * 7 + c) % 13) as f32 * 0.01);
    let w = DenseArray::<f32>::from_fn(f, f, |r, c| ((r + 3 * c) % 5) as f32 * 0.01);
    let mut out = vec![0.0f32; rows * f];
    let per_candidate = time_it(grid.repeats, || {
        for _ in 0..grid.batch {
            gemm(1.0, x.view(), w.view(), 0.0, MatMut::new(&mut out, rows, f));
        }
        black_box(&out);
    });
    Ok([
        summarize(&format!("score_{knob}"), value, craft),
        summarize(&format!("per_candidate_{knob}"), value, per_candidate),
    ])
}

/// Runs every grid point and returns the timing table.
pub fn bench_complexity(grid: &BenchGrid) -> Result<Vec<BenchRow>, EvalError> {
    grid.validate()?;
    let mut rows = Vec::new();
    for &d in &grid.degrees {
        rows.push(extraction_row(grid, d)?);
    }
    for &q in &grid.qs {
        rows.extend(scoring_rows(grid, "q", q, grid.fixed_k, q)?);
    }
    for &k in &grid.ks {
        rows.extend(scoring_rows(grid, "k", k, k, grid.fixed_q)?);
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

pub fn write_bench_csv(rows: &[BenchRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "knob,value,mean_ns,p50_ns,p95_ns,repeats")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.1},{:.1},{:.1},{}",
            r.knob, r.value, r.mean_ns, r.p50_ns, r.p95_ns, r.repeats
        )?;
    }
    Ok(())
}
