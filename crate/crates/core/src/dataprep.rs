//! Chronological splits, collision-checked negative sampling, training
//! pairs and batched ranking queries.

use std::io::{self, Read, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{stream_rng, Stream};
use crate::tgstore::{NeighborIndex, NodeId, TemporalEdge, Timestamp};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("split fraction {name} = {value} must lie in (0, 1)")]
    BadFraction { name: &'static str, value: f64 },
    #[error("split fractions sum to {0}, expected 1")]
    FractionSum(f64),
    #[error(
        "candidate pool exhausted for query (s={s}, t={t}, d_pos={d_pos}): \
         {available} eligible nodes, {requested} requested"
    )]
    PoolExhausted {
        s: NodeId,
        t: Timestamp,
        d_pos: NodeId,
        available: usize,
        requested: usize,
    },
    #[error("cannot assemble an empty batch")]
    EmptyBatch,
    #[error("queries in one batch must share a negative count ({expected} vs {got})")]
    RaggedBatch { expected: usize, got: usize },
    #[error("negative cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------- splits

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, value) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(DataError::BadFraction { name, value });
            }
        }
        let sum = self.train + self.validation + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::FractionSum(sum));
        }
        Ok(())
    }

    /// Ordinal ranges of the three parts for `m` edges. Train and validation
    /// take `floor(fraction * m)` edges; the remainder goes to test.
    pub fn bounds(&self, m: usize) -> Result<SplitBounds, DataError> {
        self.validate()?;
        // The epsilon absorbs products like 0.7 * 30 = 20.999999999999996.
        let size = |f: f64| ((f * m as f64) + 1e-9).floor() as usize;
        let n_train = size(self.train).min(m);
        let n_val = size(self.validation).min(m - n_train);
        Ok(SplitBounds {
            train: 0..n_train,
            validation: n_train..n_train + n_val,
            test: n_train + n_val..m,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Split<'a> {
    pub train: &'a [TemporalEdge],
    pub validation: &'a [TemporalEdge],
    pub test: &'a [TemporalEdge],
}

/// Ordinal-contiguous partition of the time-sorted edge sequence.
pub fn chronological_split<'a>(
    edges: &'a [TemporalEdge],
    spec: &SplitSpec,
) -> Result<(Split<'a>, SplitBounds), DataError> {
    let bounds = spec.bounds(edges.len())?;
    let split = Split {
        train: &edges[bounds.train.clone()],
        validation: &edges[bounds.validation.clone()],
        test: &edges[bounds.test.clone()],
    };
    Ok((split, bounds))
}

/// Text record of a split, enough to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub fractions: SplitSpec,
    pub num_edges: usize,
    pub train: [usize; 2],
    pub validation: [usize; 2],
    pub test: [usize; 2],
    pub dataset_checksum: String,
    pub seed: u64,
    pub q_eval: usize,
}

impl SplitManifest {
    pub fn new(
        spec: SplitSpec,
        bounds: &SplitBounds,
        dataset_checksum: &str,
        seed: u64,
        q_eval: usize,
    ) -> Self {
        let r = |r: &Range<usize>| [r.start, r.end];
        Self {
            fractions: spec,
            num_edges: bounds.test.end,
            train: r(&bounds.train),
            validation: r(&bounds.validation),
            test: r(&bounds.test),
            dataset_checksum: dataset_checksum.to_string(),
            seed,
            q_eval,
        }
    }
}

// ------------------------------------------------------------- sampling

/// Nodes eligible as ranking candidates: the destination partition of a
/// bipartite graph, every node otherwise.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    nodes: Vec<NodeId>,
    member: Vec<bool>,
    bipartite: bool,
}

impl CandidatePool {
    pub fn from_index(index: &NeighborIndex) -> Self {
        let meta = index.meta();
        let member: Vec<bool> = (0..meta.num_nodes as NodeId)
            .map(|n| !meta.bipartite || meta.is_destination(n))
            .collect();
        let nodes = (0..meta.num_nodes as NodeId)
            .filter(|&n| member[n as usize])
            .collect();
        Self {
            nodes,
            member,
            bipartite: meta.bipartite,
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.member.get(node as usize).copied().unwrap_or(false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Validation,
    Test,
}

/// Rank `d_pos` against `negatives` for source `s` at time `t`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankingQuery {
    pub s: NodeId,
    pub t: Timestamp,
    pub d_pos: NodeId,
    pub negatives: Vec<NodeId>,
    pub phase: Phase,
}

impl RankingQuery {
    /// Candidate list with the positive at index 0.
    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.d_pos).chain(self.negatives.iter().copied())
    }
}

/// Draws `q` distinct negatives uniformly from the pool, excluding `d_pos`,
/// every destination of an `s -> *` edge at exactly `t`, and `s` itself on
/// non-bipartite graphs.
pub fn sample_negatives(
    rng: &mut impl Rng,
    index: &NeighborIndex,
    pool: &CandidatePool,
    s: NodeId,
    t: Timestamp,
    d_pos: NodeId,
    q: usize,
) -> Result<Vec<NodeId>, DataError> {
    let mut excluded: Vec<NodeId> = index.destinations_at(s, t).chain([d_pos]).collect();
    if !pool.bipartite {
        excluded.push(s);
    }
    excluded.sort_unstable();
    excluded.dedup();
    let blocked = excluded.iter().filter(|&&n| pool.contains(n)).count();
    let available = pool.nodes.len() - blocked;
    if available < q {
        return Err(DataError::PoolExhausted {
            s,
            t,
            d_pos,
            available,
            requested: q,
        });
    }
    let is_excluded = |n: NodeId| excluded.binary_search(&n).is_ok();

    if 2 * q <= available {
        // Rejection sampling: cheap when the pool is much larger than q.
        let mut picked: Vec<NodeId> = Vec::with_capacity(q);
        while picked.len() < q {
            let n = pool.nodes[rng.gen_range(0..pool.nodes.len())];
            if !is_excluded(n) && !picked.contains(&n) {
                picked.push(n);
            }
        }
        Ok(picked)
    } else {
        let mut eligible: Vec<NodeId> = pool
            .nodes
            .iter()
            .copied()
            .filter(|&n| !is_excluded(n))
            .collect();
        let (chosen, _) = eligible.partial_shuffle(rng, q);
        Ok(chosen.to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub s: NodeId,
    pub t: Timestamp,
    pub d_pos: NodeId,
    pub d_neg: NodeId,
}

impl TrainingPair {
    pub fn to_query(self) -> RankingQuery {
        RankingQuery {
            s: self.s,
            t: self.t,
            d_pos: self.d_pos,
            negatives: vec![self.d_neg],
            phase: Phase::Train,
        }
    }
}

/// One negative per training edge, drawn from `rng`.
pub fn make_training_pairs(
    rng: &mut impl Rng,
    train_edges: &[TemporalEdge],
    index: &NeighborIndex,
    pool: &CandidatePool,
) -> Result<Vec<TrainingPair>, DataError> {
    train_edges
        .iter()
        .map(|e| {
            let neg = sample_negatives(rng, index, pool, e.src, e.t, e.dst, 1)?;
            Ok(TrainingPair {
                s: e.src,
                t: e.t,
                d_pos: e.dst,
                d_neg: neg[0],
            })
        })
        .collect()
}

/// Training pairs for one epoch; negatives come from a stream keyed by
/// `(seed, epoch)` so every epoch resamples them.
pub fn epoch_training_pairs(
    seed: u64,
    epoch: u64,
    train_edges: &[TemporalEdge],
    index: &NeighborIndex,
    pool: &CandidatePool,
) -> Result<Vec<TrainingPair>, DataError> {
    let mut rng = stream_rng(seed, Stream::TrainNegatives, epoch, 0);
    make_training_pairs(&mut rng, train_edges, index, pool)
}

pub fn shuffle_training<P>(rng: &mut impl Rng, pairs: &mut [P]) {
    pairs.shuffle(rng);
}

/// Fixed evaluation queries. Each query draws from its own stream keyed by
/// the edge ordinal, so the result does not depend on iteration order.
pub fn make_eval_queries(
    seed: u64,
    phase: Phase,
    edges: &[TemporalEdge],
    index: &NeighborIndex,
    pool: &CandidatePool,
    q: usize,
) -> Result<Vec<RankingQuery>, DataError> {
    let stream = match phase {
        Phase::Validation => Stream::ValidationNegatives,
        Phase::Test => Stream::TestNegatives,
        Phase::Train => Stream::TrainNegatives,
    };
    edges
        .iter()
        .map(|e| {
            let mut rng = stream_rng(seed, stream, e.ord as u64, 1);
            let negatives = sample_negatives(&mut rng, index, pool, e.src, e.t, e.dst, q)?;
            Ok(RankingQuery {
                s: e.src,
                t: e.t,
                d_pos: e.dst,
                negatives,
                phase,
            })
        })
        .collect()
}

// -------------------------------------------------------------- batching

/// Ranking queries plus the historical context the model consumes.
///
/// Neighbor slots run oldest to newest with padding on the left; the
/// padding id is `num_nodes` (the zero row of the embedding table).
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub k: usize,
    /// Candidates per query (`1 + q`), positive first.
    pub num_candidates: usize,
    pub sources: Vec<NodeId>,
    pub times: Vec<Timestamp>,
    pub neighbors: Vec<NodeId>,
    pub neighbor_times: Vec<Timestamp>,
    /// `true` marks a padding slot.
    pub mask: Vec<bool>,
    pub candidates: Vec<NodeId>,
    /// `t - t_last` per candidate; `None` when the candidate was never active.
    pub elapsed: Vec<Option<Timestamp>>,
    pub repeats: Option<Vec<u32>>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Whether query `b` has no history at all.
    pub fn is_cold(&self, b: usize) -> bool {
        self.mask[b * self.k..(b + 1) * self.k].iter().all(|&m| m)
    }
}

pub fn assemble_batch(
    index: &NeighborIndex,
    queries: &[RankingQuery],
    k: usize,
    with_repeats: bool,
) -> Result<QueryBatch, DataError> {
    let first = queries.first().ok_or(DataError::EmptyBatch)?;
    let num_candidates = 1 + first.negatives.len();
    let pad = index.num_nodes() as NodeId;
    let b = queries.len();
    let mut batch = QueryBatch {
        k,
        num_candidates,
        sources: Vec::with_capacity(b),
        times: Vec::with_capacity(b),
        neighbors: Vec::with_capacity(b * k),
        neighbor_times: Vec::with_capacity(b * k),
        mask: Vec::with_capacity(b * k),
        candidates: Vec::with_capacity(b * num_candidates),
        elapsed: Vec::with_capacity(b * num_candidates),
        repeats: with_repeats.then(|| Vec::with_capacity(b * num_candidates)),
    };
    for q in queries {
        if 1 + q.negatives.len() != num_candidates {
            return Err(DataError::RaggedBatch {
                expected: num_candidates - 1,
                got: q.negatives.len(),
            });
        }
        batch.sources.push(q.s);
        batch.times.push(q.t);
        let recent = index.recent_neighbors(q.s, q.t, k);
        for _ in recent.len()..k {
            batch.neighbors.push(pad);
            batch.neighbor_times.push(0);
            batch.mask.push(true);
        }
        for e in recent {
            batch.neighbors.push(e.peer);
            batch.neighbor_times.push(e.t);
            batch.mask.push(false);
        }
        for d in q.candidates() {
            batch.candidates.push(d);
            batch
                .elapsed
                .push(index.last_activity(d, q.t).map(|last| q.t - last));
            if let Some(r) = batch.repeats.as_mut() {
                r.push(index.repeat_count(q.s, d, q.t) as u32);
            }
        }
    }
    Ok(batch)
}

// -------------------------------------------------------- negative cache

const CACHE_MAGIC: &[u8; 8] = b"CRAFTNEG";
const CACHE_VERSION: u32 = 1;

/// Binary cache of the fixed validation and test queries for one seed.
///
/// Layout (little endian): magic, version `u32`, seed `u64`, then for each
/// of validation and test: query count `u64`, negatives per query `u32`,
/// and per query `s: u32, t: u64, d_pos: u32, negatives: [u32; q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeCache {
    pub seed: u64,
    pub validation: Vec<RankingQuery>,
    pub test: Vec<RankingQuery>,
}

impl NegativeCache {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), DataError> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for queries in [&self.validation, &self.test] {
            let q = queries.first().map_or(0, |x| x.negatives.len());
            w.write_all(&(queries.len() as u64).to_le_bytes())?;
            w.write_all(&(q as u32).to_le_bytes())?;
            for query in queries.iter() {
                if query.negatives.len() != q {
                    return Err(DataError::RaggedBatch {
                        expected: q,
                        got: query.negatives.len(),
                    });
                }
                w.write_all(&query.s.to_le_bytes())?;
                w.write_all(&query.t.to_le_bytes())?;
                w.write_all(&query.d_pos.to_le_bytes())?;
                for n in &query.negatives {
                    w.write_all(&n.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, expected_seed: u64) -> Result<Self, DataError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(DataError::Cache("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(DataError::Cache(format!("unsupported version {version}")));
        }
        let seed = read_u64(&mut r)?;
        if seed != expected_seed {
            return Err(DataError::Cache(format!(
                "cache seed {seed} does not match run seed {expected_seed}"
            )));
        }
        let mut parts = Vec::with_capacity(2);
        for phase in [Phase::Validation, Phase::Test] {
            let n = read_u64(&mut r)? as usize;
            let q = read_u32(&mut r)? as usize;
            let mut queries = Vec::with_capacity(n);
            for _ in 0..n {
                let s = read_u32(&mut r)?;
                let t = read_u64(&mut r)?;
                let d_pos = read_u32(&mut r)?;
                let negatives = (0..q).map(|_| read_u32(&mut r)).collect::<Result<_, _>>()?;
                queries.push(RankingQuery {
                    s,
                    t,
                    d_pos,
                    negatives,
                    phase,
                });
            }
            parts.push(queries);
        }
        let test = parts.pop().unwrap_or_default();
        let validation = parts.pop().unwrap_or_default();
        Ok(Self {
            seed,
            validation,
            test,
        })
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tgstore::{edges_from_triples, GraphMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(m: usize) -> Vec<TemporalEdge> {
        (0..m)
            .map(|i| TemporalEdge::new(0, 1, i as u64, i))
            .collect()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let spec = SplitSpec::default();
        assert_eq!(spec.bounds(100).unwrap().sizes(), (70, 15, 15));
        assert_eq!(spec.bounds(10).unwrap().sizes(), (7, 1, 2));
        assert_eq!(spec.bounds(59_835).unwrap().train.len(), 41_884);
        assert_eq!(spec.bounds(30).unwrap().sizes(), (21, 4, 5));
        assert_eq!(spec.bounds(0).unwrap().sizes(), (0, 0, 0));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let bad = SplitSpec {
            train: 0.0,
            validation: 0.5,
            test: 0.5,
        };
        assert!(matches!(
            bad.validate(),
            Err(DataError::BadFraction { name: "train", .. })
        ));
        let typo = SplitSpec {
            train: 0.75,
            validation: 0.15,
            test: 0.15,
        };
        assert!(matches!(typo.validate(), Err(DataError::FractionSum(_))));
    }

    #[test]
    fn split_is_ordinal_contiguous() {
        let edges = line(57);
        let (split, bounds) = chronological_split(&edges, &SplitSpec::default()).unwrap();
        assert_eq!(
            split.train.len() + split.validation.len() + split.test.len(),
            57
        );
        assert_eq!(split.validation[0].ord, bounds.validation.start);
        assert!(split.train.last().unwrap().t <= split.validation[0].t);
        assert!(split.validation.last().unwrap().t <= split.test[0].t);
    }

    #[test]
    fn negatives_exclude_the_positive() {
        // Pool {0..4}: bipartite with every node a destination.
        let idx = NeighborIndex::build(&[], GraphMeta::bipartite(0, 5)).unwrap();
        let pool = CandidatePool::from_index(&idx);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut negs = sample_negatives(&mut rng, &idx, &pool, 0, 10, 2, 4).unwrap();
        negs.sort();
        assert_eq!(negs, vec![0, 1, 3, 4]);
    }

    #[test]
    fn negatives_exclude_concurrent_positives() {
        // Source 5 outside the pool {0..4}; concurrent positives 1 and 3 at t=7.
        let edges = edges_from_triples(&[(5, 1, 7), (5, 3, 7)]);
        let mut meta = GraphMeta::bipartite(0, 5);
        meta.num_nodes = 6;
        meta.destination_partition.as_mut().unwrap().push(false);
        let idx = NeighborIndex::build(&edges, meta).unwrap();
        let pool = CandidatePool::from_index(&idx);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut negs = sample_negatives(&mut rng, &idx, &pool, 5, 7, 1, 3).unwrap();
        negs.sort();
        assert_eq!(negs, vec![0, 2, 4]);
        let err = sample_negatives(&mut rng, &idx, &pool, 5, 7, 1, 4).unwrap_err();
        assert!(matches!(err, DataError::PoolExhausted { available: 3, .. }));
    }

    #[test]
    fn homogeneous_pool_excludes_source() {
        let idx = NeighborIndex::build(&[], GraphMeta::homogeneous(4)).unwrap();
        let pool = CandidatePool::from_index(&idx);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut negs = sample_negatives(&mut rng, &idx, &pool, 0, 1, 1, 2).unwrap();
        negs.sort();
        assert_eq!(negs, vec![2, 3]);
    }

    #[test]
    fn training_pairs_replay_and_resample() {
        let edges = edges_from_triples(&[(0, 1, 1), (2, 3, 2), (0, 3, 3), (4, 1, 4)]);
        let idx = NeighborIndex::build(&edges, GraphMeta::homogeneous(30)).unwrap();
        let pool = CandidatePool::from_index(&idx);
        let a = epoch_training_pairs(9, 0, &edges, &idx, &pool).unwrap();
        let b = epoch_training_pairs(9, 0, &edges, &idx, &pool).unwrap();
        let c = epoch_training_pairs(9, 1, &edges, &idx, &pool).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (x, y) in a.iter().zip(&c) {
            assert_eq!((x.s, x.t, x.d_pos), (y.s, y.t, y.d_pos));
            assert_ne!(x.d_neg, x.d_pos);
        }
    }

    #[test]
    fn single_edge_training_set() {
        let edges = edges_from_triples(&[(0, 1, 1)]);
        let idx = NeighborIndex::build(&edges, GraphMeta::homogeneous(3)).unwrap();
        let pool = CandidatePool::from_index(&idx);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = make_training_pairs(&mut rng, &edges, &idx, &pool).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].d_neg, 2);
    }

    #[test]
    fn shuffle_is_deterministic_and_handles_singletons() {
        let mut one = vec![42];
        shuffle_training(&mut ChaCha8Rng::seed_from_u64(0), &mut one);
        assert_eq!(one, vec![42]);
        let mut a: Vec<u32> = (0..20).collect();
        let mut b = a.clone();
        shuffle_training(&mut ChaCha8Rng::seed_from_u64(5), &mut a);
        shuffle_training(&mut ChaCha8Rng::seed_from_u64(5), &mut b);
        assert_eq!(a, b);
        assert_ne!(a, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn batch_pads_left_and_flags_fresh_candidates() {
        let edges = edges_from_triples(&[(0, 1, 1), (0, 2, 2), (3, 2, 3)]);
        let idx = NeighborIndex::build(&edges, GraphMeta::homogeneous(5)).unwrap();
        let query = RankingQuery {
            s: 0,
            t: 10,
            d_pos: 2,
            negatives: vec![4, 1],
            phase: Phase::Test,
        };
        let batch = assemble_batch(&idx, &[query], 4, true).unwrap();
        assert_eq!(batch.neighbors, vec![5, 5, 1, 2]);
        assert_eq!(batch.mask, vec![true, true, false, false]);
        assert_eq!(batch.neighbor_times, vec![0, 0, 1, 2]);
        assert_eq!(batch.candidates, vec![2, 4, 1]);
        assert_eq!(batch.elapsed, vec![Some(7), None, Some(9)]);
        assert_eq!(batch.repeats, Some(vec![1, 0, 1]));
        assert!(!batch.is_cold(0));
    }

    #[test]
    fn batch_rejects_empty_and_ragged() {
        let idx = NeighborIndex::build(&[], GraphMeta::homogeneous(3)).unwrap();
        assert!(matches!(
            assemble_batch(&idx, &[], 2, false),
            Err(DataError::EmptyBatch)
        ));
        let q = |n: Vec<NodeId>| RankingQuery {
            s: 0,
            t: 1,
            d_pos: 1,
            negatives: n,
            phase: Phase::Train,
        };
        assert!(matches!(
            assemble_batch(&idx, &[q(vec![2]), q(vec![])], 2, false),
            Err(DataError::RaggedBatch { .. })
        ));
    }

    #[test]
    fn negative_cache_round_trips() {
        let q = |s, negs: Vec<NodeId>, phase| RankingQuery {
            s,
            t: 99,
            d_pos: 3,
            negatives: negs,
            phase,
        };
        let cache = NegativeCache {
            seed: 17,
            validation: vec![q(1, vec![4, 5], Phase::Validation)],
            test: vec![q(2, vec![6, 7], Phase::Test), q(0, vec![1, 2], Phase::Test)],
        };
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        assert_eq!(NegativeCache::read_from(buf.as_slice(), 17).unwrap(), cache);
        assert!(NegativeCache::read_from(buf.as_slice(), 18).is_err());
    }
}
