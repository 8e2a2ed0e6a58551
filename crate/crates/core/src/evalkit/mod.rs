//! Ranking evaluation, the EdgeBank heuristic, ablations and complexity
//! microbenchmarks.

mod ablation;
mod bench;

pub use ablation::{run_ablation, AblationRow, AblationTable, Toggle};
pub use bench::{bench_complexity, loglog_slope, write_bench_csv, BenchGrid, BenchRow};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::{assemble_batch, DataError, RankingQuery};
use crate::model::{CraftModel, ModelError};
use crate::numerics::{ParamStore, Real};
use crate::tgstore::{NeighborIndex, StoreError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("cannot rank an empty score vector")]
    EmptyScores,
    #[error("scorer returned {got} scores, expected {expected}")]
    ScoreCount { expected: usize, got: usize },
    #[error("invalid benchmark grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rank of `scores[0]` among all scores, counting ties against it.
pub fn rank_of_positive<T: Real>(scores: &[T]) -> Result<usize, EvalError> {
    let (&pos, negatives) = scores.split_first().ok_or(EvalError::EmptyScores)?;
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore { index });
    }
    Ok(1 + negatives.iter().filter(|&&s| s >= pos).count())
}

/// Anything that scores ranking queries: `1 + q` values per query with the
/// positive first.
pub trait Scorer {
    fn score_queries(
        &self,
        index: &NeighborIndex,
        queries: &[RankingQuery],
    ) -> Result<Vec<f64>, EvalError>;
}

/// A trained model bound to its parameters.
pub struct CraftScorer<'a, T> {
    pub model: &'a CraftModel,
    pub store: &'a ParamStore<T>,
}

impl<T: Real> Scorer for CraftScorer<'_, T> {
    fn score_queries(
        &self,
        index: &NeighborIndex,
        queries: &[RankingQuery],
    ) -> Result<Vec<f64>, EvalError> {
        let c = &self.model.config;
        let batch = assemble_batch(index, queries, c.neighbors, c.use_repeat)?;
        Ok(self
            .model
            .score(self.store, &batch)?
            .into_iter()
            .map(|s| s.as_f64())
            .collect())
    }
}

/// Unlimited-memory EdgeBank: 1 for pairs seen before the query time.
#[derive(Clone, Copy, Debug, Default)]
pub struct EdgeBank;

pub fn edgebank_score(index: &NeighborIndex, s: u32, d: u32, t: u64) -> f64 {
    if index.repeat_count(s, d, t) > 0 {
        1.0
    } else {
        0.0
    }
}

impl Scorer for EdgeBank {
    fn score_queries(
        &self,
        index: &NeighborIndex,
        queries: &[RankingQuery],
    ) -> Result<Vec<f64>, EvalError> {
        Ok(queries
            .iter()
            .flat_map(|q| {
                q.candidates()
                    .map(move |d| edgebank_score(index, q.s, d, q.t))
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    /// Ranks of the scored queries, in query order.
    pub ranks: Vec<usize>,
    pub queries: usize,
    /// Cold-source queries excluded from the mean.
    pub skipped: usize,
    pub wall_ms: u64,
    pub config_fingerprint: String,
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Scores every query whose source has history before its timestamp and
/// reports the MRR; the rest are counted as skipped.
pub fn evaluate(
    scorer: &impl Scorer,
    index: &NeighborIndex,
    queries: &[RankingQuery],
    batch_size: usize,
    config_fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    let start = Instant::now();
    let scoreable: Vec<RankingQuery> = queries
        .iter()
        .filter(|q| index.history_len(q.s, q.t) > 0)
        .cloned()
        .collect();
    let mut ranks = Vec::with_capacity(scoreable.len());
    for chunk in scoreable.chunks(batch_size.max(1)) {
        let scores = scorer.score_queries(index, chunk)?;
        let expected: usize = chunk.iter().map(|q| 1 + q.negatives.len()).sum();
        if scores.len() != expected {
            return Err(EvalError::ScoreCount {
                expected,
                got: scores.len(),
            });
        }
        let mut offset = 0;
        for q in chunk {
            let j = 1 + q.negatives.len();
            ranks.push(rank_of_positive(&scores[offset..offset + j])?);
            offset += j;
        }
    }
    Ok(EvalReport {
        mrr: mean_reciprocal_rank(&ranks),
        queries: ranks.len(),
        skipped: queries.len() - scoreable.len(),
        ranks,
        wall_ms: start.elapsed().as_millis() as u64,
        config_fingerprint: config_fingerprint.to_string(),
    })
}
