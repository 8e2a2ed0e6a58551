//! Dataset preparation and early-stopped training shared by the command
//! line and the ablation runner.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataprep::{
    chronological_split, make_eval_queries, CandidatePool, NegativeCache, Phase, RankingQuery,
    SplitBounds, SplitSpec,
};
use crate::evalkit::{evaluate, CraftScorer, EvalError, EvalReport};
use crate::model::{train_epoch, CraftModel, ModelConfig, TrainContext};
use crate::numerics::{Adam, AdamConfig, ParamStore, Real};
use crate::tgstore::{GraphMeta, NeighborIndex, TemporalEdge};

/// A split dataset with its index and fixed evaluation queries.
pub struct Prepared {
    pub edges: Vec<TemporalEdge>,
    pub index: NeighborIndex,
    pub pool: CandidatePool,
    pub bounds: SplitBounds,
    pub validation: Vec<RankingQuery>,
    pub test: Vec<RankingQuery>,
}

impl Prepared {
    /// Builds the index over the full stream (every lookup is strictly
    /// before its query time) and draws the evaluation negatives.
    pub fn new(
        edges: Vec<TemporalEdge>,
        meta: GraphMeta,
        spec: &SplitSpec,
        seed: u64,
        q_eval: usize,
    ) -> Result<Self, EvalError> {
        let index = NeighborIndex::build(&edges, meta)?;
        let pool = CandidatePool::from_index(&index);
        let (split, bounds) = chronological_split(&edges, spec)?;
        let validation = make_eval_queries(
            seed,
            Phase::Validation,
            split.validation,
            &index,
            &pool,
            q_eval,
        )?;
        let test = make_eval_queries(seed, Phase::Test, split.test, &index, &pool, q_eval)?;
        Ok(Self {
            edges,
            index,
            pool,
            bounds,
            validation,
            test,
        })
    }

    /// Same as [`Prepared::new`] but with evaluation queries from a cache.
    pub fn with_cache(
        edges: Vec<TemporalEdge>,
        meta: GraphMeta,
        spec: &SplitSpec,
        cache: NegativeCache,
    ) -> Result<Self, EvalError> {
        let index = NeighborIndex::build(&edges, meta)?;
        let pool = CandidatePool::from_index(&index);
        let (_, bounds) = chronological_split(&edges, spec)?;
        Ok(Self {
            edges,
            index,
            pool,
            bounds,
            validation: cache.validation,
            test: cache.test,
        })
    }

    pub fn train_edges(&self) -> &[TemporalEdge] {
        &self.edges[self.bounds.train.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: u64,
    pub adam: AdamConfig,
    pub eval_batch_size: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            batch_size: 200,
            max_epochs: 100,
            patience: 5,
            adam: AdamConfig::default(),
            eval_batch_size: 64,
        }
    }
}

/// One line of the metrics stream. Everything here is a deterministic
/// function of config and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_mrr: f64,
    pub skipped_cold_sources: usize,
}

pub struct FitResult<T> {
    pub model: CraftModel,
    /// Parameters of the best validation epoch.
    pub store: ParamStore<T>,
    pub best_epoch: u64,
    pub best_val_mrr: f64,
    pub history: Vec<EpochRecord>,
}

/// Per-epoch hook: the record, whether it improved on the best validation
/// MRR so far, the epoch's wall time, and the current parameters.
pub type EpochHook<'a, T> =
    dyn FnMut(&EpochRecord, bool, Duration, &ParamStore<T>) -> Result<(), EvalError> + 'a;

/// Trains with early stopping on validation MRR.
pub fn fit<T: Real>(
    config: ModelConfig,
    data: &Prepared,
    opts: &FitOptions,
    seed: u64,
    on_epoch: &mut EpochHook<'_, T>,
) -> Result<FitResult<T>, EvalError> {
    let (model, mut store) = CraftModel::init::<T>(config, data.index.num_nodes(), seed)?;
    let mut adam = Adam::new(opts.adam);
    let mut best: Option<(u64, f64, ParamStore<T>)> = None;
    let mut history = Vec::new();
    for epoch in 0..opts.max_epochs {
        let start = Instant::now();
        let ctx = TrainContext {
            index: &data.index,
            pool: &data.pool,
            train_edges: data.train_edges(),
            batch_size: opts.batch_size,
            seed,
            epoch,
        };
        let stats = train_epoch(&model, &mut store, &mut adam, &ctx)?;
        let val = evaluate_model(
            &model,
            &store,
            data,
            &data.validation,
            opts.eval_batch_size,
            "",
        )?;
        let record = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            val_mrr: val.mrr,
            skipped_cold_sources: stats.skipped_cold_sources,
        };
        let improved = best.as_ref().is_none_or(|(_, mrr, _)| val.mrr > *mrr);
        if improved {
            best = Some((epoch, val.mrr, store.clone()));
        }
        on_epoch(&record, improved, start.elapsed(), &store)?;
        history.push(record);
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= opts.patience {
            break;
        }
    }
    let (best_epoch, best_val_mrr, store) = best.unwrap_or((0, 0.0, store));
    Ok(FitResult {
        model,
        store,
        best_epoch,
        best_val_mrr,
        history,
    })
}

pub fn evaluate_model<T: Real>(
    model: &CraftModel,
    store: &ParamStore<T>,
    data: &Prepared,
    queries: &[RankingQuery],
    batch_size: usize,
    fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    evaluate(
        &CraftScorer { model, store },
        &data.index,
        queries,
        batch_size,
        fingerprint,
    )
}
