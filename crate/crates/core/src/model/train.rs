use super::forward::{CraftModel, Mode};
use super::loss::pair_loss;
use super::ModelError;
use crate::dataprep::{
    assemble_batch, sample_negatives, shuffle_training, CandidatePool, Phase, QueryBatch,
    RankingQuery,
};
use crate::numerics::{Adam, ParamStore, Real};
use crate::seeding::{stream_rng, Stream};
use crate::tgstore::{NeighborIndex, TemporalEdge};

/// Everything one training epoch reads besides the parameters.
pub struct TrainContext<'a> {
    pub index: &'a NeighborIndex,
    pub pool: &'a CandidatePool,
    pub train_edges: &'a [TemporalEdge],
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean per-query loss over all scored queries.
    pub mean_loss: f64,
    pub batches: usize,
    pub queries: usize,
    pub skipped_cold_sources: usize,
}

/// Mean loss of a batch and its gradient with respect to every score. Each
/// query contributes the mean of its pairwise losses over its negatives.
pub fn batch_loss<T: Real>(model: &CraftModel, scores: &[T], num_candidates: usize) -> (T, Vec<T>) {
    let nq = scores.len() / num_candidates;
    let q = num_candidates - 1;
    let norm = T::lit((nq * q) as f64);
    let mut total = T::zero();
    let mut d_scores = vec![T::zero(); scores.len()];
    for b in 0..nq {
        let base = b * num_candidates;
        let y_pos = scores[base];
        for n in 1..num_candidates {
            let (l, gp, gn) = pair_loss(model.config.loss, y_pos, scores[base + n]);
            total += l;
            d_scores[base] += gp / norm;
            d_scores[base + n] += gn / norm;
        }
    }
    (total / norm, d_scores)
}

/// One pass over the training edges: fresh negatives and a fresh shuffle
/// per epoch, then forward, loss, backward and an Adam step per batch.
/// Cold sources are skipped and counted.
pub fn train_epoch<T: Real>(
    model: &CraftModel,
    store: &mut ParamStore<T>,
    optimizer: &mut Adam,
    ctx: &TrainContext<'_>,
) -> Result<EpochStats, ModelError> {
    let c = &model.config;
    let mut neg_rng = stream_rng(ctx.seed, Stream::TrainNegatives, ctx.epoch, 0);
    let mut queries = Vec::with_capacity(ctx.train_edges.len());
    let mut skipped = 0;
    for e in ctx.train_edges {
        let negatives = sample_negatives(
            &mut neg_rng,
            ctx.index,
            ctx.pool,
            e.src,
            e.t,
            e.dst,
            c.q_train,
        )?;
        if ctx.index.history_len(e.src, e.t) == 0 {
            skipped += 1;
            continue;
        }
        queries.push(RankingQuery {
            s: e.src,
            t: e.t,
            d_pos: e.dst,
            negatives,
            phase: Phase::Train,
        });
    }
    shuffle_training(
        &mut stream_rng(ctx.seed, Stream::Shuffle, ctx.epoch, 0),
        &mut queries,
    );

    let mut total = 0.0;
    let mut batches = 0;
    for (ordinal, chunk) in queries.chunks(ctx.batch_size.max(1)).enumerate() {
        let batch = assemble_batch(ctx.index, chunk, c.neighbors, c.use_repeat)?;
        let loss = train_step(
            model, store, optimizer, &batch, ctx.seed, ctx.epoch, ordinal,
        )?;
        total += loss * chunk.len() as f64;
        batches += 1;
    }
    Ok(EpochStats {
        mean_loss: if queries.is_empty() {
            0.0
        } else {
            total / queries.len() as f64
        },
        batches,
        queries: queries.len(),
        skipped_cold_sources: skipped,
    })
}

/// A single optimizer step on one assembled batch; returns the batch loss.
pub(crate) fn train_step<T: Real>(
    model: &CraftModel,
    store: &mut ParamStore<T>,
    optimizer: &mut Adam,
    batch: &QueryBatch,
    seed: u64,
    epoch: u64,
    ordinal: usize,
) -> Result<f64, ModelError> {
    let mode = Mode::Train {
        seed,
        epoch,
        batch: ordinal as u64,
    };
    let fwd = model.forward(store, batch, mode)?;
    let (loss, d_scores) = batch_loss(model, &fwd.scores, batch.num_candidates);
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { batch: ordinal });
    }
    let grads = model.backward(store, &fwd, &d_scores)?;
    grads.accumulate_into(store);
    optimizer.step(store);
    if !store.all_finite() {
        return Err(ModelError::NonFiniteParams { batch: ordinal });
    }
    Ok(loss.as_f64())
}

impl CraftModel {
    /// Repeated optimizer steps on one fixed batch; returns the loss before
    /// each step. Handy for optimization sanity checks.
    pub fn fit_batch<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        optimizer: &mut Adam,
        batch: &QueryBatch,
        steps: usize,
        seed: u64,
    ) -> Result<Vec<f64>, ModelError> {
        (0..steps)
            .map(|i| train_step(self, store, optimizer, batch, seed, 0, i))
            .collect()
    }
}
