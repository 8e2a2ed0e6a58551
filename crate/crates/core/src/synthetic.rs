//! Synthetic interaction streams with a planted signal.
//!
//! Sources are nodes `0..sources`, destinations follow. Timestamps are the
//! edge ordinals plus one, so every edge has a distinct time.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::seeding::{stream_rng, Stream};
use crate::tgstore::{GraphMeta, NodeId, TemporalEdge};

#[derive(Clone, Debug)]
pub struct SyntheticStream {
    pub edges: Vec<TemporalEdge>,
    pub meta: GraphMeta,
}

fn push(edges: &mut Vec<TemporalEdge>, s: NodeId, d: NodeId) {
    let ord = edges.len();
    edges.push(TemporalEdge::new(s, d, ord as u64 + 1, ord));
}

/// Each source walks repeatedly through its own fixed sequence of
/// `cycle` distinct destinations. Sources act in a random order within each
/// round. The graph is treated as homogeneous so that every node is a
/// candidate.
pub fn cyclic_stream(
    sources: u32,
    destinations: u32,
    cycle: usize,
    rounds: usize,
    seed: u64,
) -> SyntheticStream {
    let mut rng = stream_rng(seed, Stream::Synthetic, 1, 0);
    let all: Vec<NodeId> = (sources..sources + destinations).collect();
    let sequences: Vec<Vec<NodeId>> = (0..sources)
        .map(|_| all.choose_multiple(&mut rng, cycle).copied().collect())
        .collect();
    let mut order: Vec<NodeId> = (0..sources).collect();
    let mut edges = Vec::with_capacity(sources as usize * rounds);
    for round in 0..rounds {
        order.shuffle(&mut rng);
        for &s in &order {
            push(&mut edges, s, sequences[s as usize][round % cycle]);
        }
    }
    SyntheticStream {
        edges,
        meta: GraphMeta::homogeneous((sources + destinations) as usize),
    }
}

/// Uniformly random sources; with probability `repeat_prob` the edge goes
/// back to the source's previous partner, otherwise to a uniform random
/// destination. Bipartite.
pub fn seen_dominant_stream(
    sources: u32,
    destinations: u32,
    num_edges: usize,
    repeat_prob: f64,
    seed: u64,
) -> SyntheticStream {
    let mut rng = stream_rng(seed, Stream::Synthetic, 2, 0);
    let mut previous: Vec<Option<NodeId>> = vec![None; sources as usize];
    let mut edges = Vec::with_capacity(num_edges);
    for _ in 0..num_edges {
        let s = rng.gen_range(0..sources);
        let d = match previous[s as usize] {
            Some(p) if rng.gen_bool(repeat_prob) => p,
            _ => rng.gen_range(sources..sources + destinations),
        };
        previous[s as usize] = Some(d);
        push(&mut edges, s, d);
    }
    SyntheticStream {
        edges,
        meta: GraphMeta::bipartite(sources as usize, destinations as usize),
    }
}

/// No (source, destination) pair ever occurs twice: each source visits a
/// random permutation of the destinations. Bipartite.
pub fn unseen_only_stream(
    sources: u32,
    destinations: u32,
    num_edges: usize,
    seed: u64,
) -> SyntheticStream {
    assert!(
        num_edges <= (sources * destinations) as usize,
        "too many edges for distinct pairs"
    );
    let mut rng = stream_rng(seed, Stream::Synthetic, 3, 0);
    let mut plans: Vec<Vec<NodeId>> = (0..sources)
        .map(|_| {
            let mut p: Vec<NodeId> = (sources..sources + destinations).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut edges = Vec::with_capacity(num_edges);
    while edges.len() < num_edges {
        let s = rng.gen_range(0..sources);
        if let Some(d) = plans[s as usize].pop() {
            push(&mut edges, s, d);
        }
    }
    SyntheticStream {
        edges,
        meta: GraphMeta::bipartite(sources as usize, destinations as usize),
    }
}

/// Destinations are used round-robin, so the positive is always the least
/// recently active destination while sources are uniformly random. Elapsed
/// time is the only informative signal. Bipartite.
pub fn least_recent_stream(
    sources: u32,
    destinations: u32,
    num_edges: usize,
    seed: u64,
) -> SyntheticStream {
    let mut rng = stream_rng(seed, Stream::Synthetic, 4, 0);
    let mut edges = Vec::with_capacity(num_edges);
    for i in 0..num_edges {
        let s = rng.gen_range(0..sources);
        push(&mut edges, s, sources + (i as u32 % destinations));
    }
    SyntheticStream {
        edges,
        meta: GraphMeta::bipartite(sources as usize, destinations as usize),
    }
}
