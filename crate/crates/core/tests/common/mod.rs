#![allow(dead_code)]

use craft_core::dataprep::{
    assemble_batch, sample_negatives, CandidatePool, Phase, QueryBatch, RankingQuery,
};
use craft_core::tgstore::{GraphMeta, NeighborIndex, TemporalEdge};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random homogeneous stream with strictly increasing timestamps.
pub fn random_stream(seed: u64, nodes: u32, edges: usize) -> (Vec<TemporalEdge>, NeighborIndex) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(edges);
    let mut t = 0;
    for ord in 0..edges {
        t += rng.gen_range(1..50);
        let s = rng.gen_range(0..nodes);
        let mut d = rng.gen_range(0..nodes);
        if d == s {
            d = (d + 1) % nodes;
        }
        out.push(TemporalEdge::new(s, d, t, ord));
    }
    let index = NeighborIndex::build(&out, GraphMeta::homogeneous(nodes as usize)).unwrap();
    (out, index)
}

/// Ranking queries for the last `count` edges whose source has history.
pub fn warm_queries(
    edges: &[TemporalEdge],
    index: &NeighborIndex,
    q: usize,
    count: usize,
    seed: u64,
) -> Vec<RankingQuery> {
    let pool = CandidatePool::from_index(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges
        .iter()
        .rev()
        .filter(|e| index.history_len(e.src, e.t) > 0)
        .take(count)
        .map(|e| RankingQuery {
            s: e.src,
            t: e.t,
            d_pos: e.dst,
            negatives: sample_negatives(&mut rng, index, &pool, e.src, e.t, e.dst, q).unwrap(),
            phase: Phase::Test,
        })
        .collect()
}

pub fn batch(
    index: &NeighborIndex,
    queries: &[RankingQuery],
    k: usize,
    repeats: bool,
) -> QueryBatch {
    assemble_batch(index, queries, k, repeats).unwrap()
}
