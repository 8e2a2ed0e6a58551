//! Time-sorted adjacency storage for a temporal edge list.
//!
//! Per-node events live in contiguous CSR arrays sorted by `(t, ord)`, so
//! every historical query is a binary search for the cut position followed
//! by a slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;
pub type Timestamp = u64;

/// One interaction `src -> dst` at time `t`. `ord` is the edge's position in
/// the time-sorted input sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: Timestamp,
    pub ord: usize,
}

impl TemporalEdge {
    pub fn new(src: NodeId, dst: NodeId, t: Timestamp, ord: usize) -> Self {
        Self { src, dst, t, ord }
    }
}

/// Builds edges from `(src, dst, t)` triples, numbering them in order.
pub fn edges_from_triples(triples: &[(NodeId, NodeId, Timestamp)]) -> Vec<TemporalEdge> {
    triples
        .iter()
        .enumerate()
        .map(|(ord, &(s, d, t))| TemporalEdge::new(s, d, t, ord))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: usize,
    pub bipartite: bool,
    /// Destination-partition membership, present for bipartite graphs.
    pub destination_partition: Option<Vec<bool>>,
}

impl GraphMeta {
    pub fn homogeneous(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            bipartite: false,
            destination_partition: None,
        }
    }

    /// Bipartite layout with sources `0..num_sources` and destinations
    /// `num_sources..num_sources + num_destinations`.
    pub fn bipartite(num_sources: usize, num_destinations: usize) -> Self {
        let mut membership = vec![false; num_sources + num_destinations];
        membership[num_sources..].iter_mut().for_each(|m| *m = true);
        Self {
            num_nodes: num_sources + num_destinations,
            bipartite: true,
            destination_partition: Some(membership),
        }
    }

    pub fn is_destination(&self, node: NodeId) -> bool {
        match &self.destination_partition {
            Some(p) => p.get(node as usize).copied().unwrap_or(false),
            None => (node as usize) < self.num_nodes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Source,
    Destination,
}

/// One entry of a node's event list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub peer: NodeId,
    pub t: Timestamp,
    pub ord: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("edges not sorted by (t, ord): first violation at ordinal {ord}")]
    Unsorted { ord: usize },
    #[error("edge {ord} references node {node}, but the graph has {num_nodes} nodes")]
    NodeOutOfRange {
        ord: usize,
        node: NodeId,
        num_nodes: usize,
    },
    #[error("edge {ord} has destination {node} outside the destination partition")]
    NotInDestinationPartition { ord: usize, node: NodeId },
    #[error("destination partition has {got} entries, expected {expected}")]
    PartitionSize { got: usize, expected: usize },
}

/// Compressed per-node event lists for one role.
#[derive(Clone, Debug, Default)]
struct Csr {
    offsets: Vec<usize>,
    events: Vec<Event>,
}

impl Csr {
    /// Stable bucket sort keyed by `key(edge)`; input order is `(t, ord)`
    /// so every bucket stays sorted by `(t, ord)`.
    fn build(
        edges: &[TemporalEdge],
        num_nodes: usize,
        key: impl Fn(&TemporalEdge) -> NodeId,
        peer: impl Fn(&TemporalEdge) -> NodeId,
    ) -> Self {
        let mut offsets = vec![0usize; num_nodes + 1];
        for e in edges {
            offsets[key(e) as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut events = vec![
            Event {
                peer: 0,
                t: 0,
                ord: 0
            };
            edges.len()
        ];
        for e in edges {
            let slot = &mut cursor[key(e) as usize];
            events[*slot] = Event {
                peer: peer(e),
                t: e.t,
                ord: e.ord,
            };
            *slot += 1;
        }
        Self { offsets, events }
    }

    fn list(&self, node: NodeId) -> &[Event] {
        let n = node as usize;
        if n + 1 >= self.offsets.len() {
            return &[];
        }
        &self.events[self.offsets[n]..self.offsets[n + 1]]
    }
}

/// Number of events strictly before `t`: the cut position in a
/// `(t, ord)`-sorted list.
fn cut_before(events: &[Event], t: Timestamp) -> usize {
    events.partition_point(|e| e.t < t)
}

/// Immutable temporal adjacency index.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    meta: GraphMeta,
    num_edges: usize,
    outgoing: Csr,
    incoming: Csr,
    /// Per source, events sorted by `(peer, t, ord)` for repeat counting.
    by_pair: Csr,
}

impl NeighborIndex {
    /// Validates ordering and node ranges, then builds the index in a single
    /// pass of bucket appends per role.
    pub fn build(edges: &[TemporalEdge], meta: GraphMeta) -> Result<Self, StoreError> {
        let n = meta.num_nodes;
        if let Some(p) = &meta.destination_partition {
            if p.len() != n {
                return Err(StoreError::PartitionSize {
                    got: p.len(),
                    expected: n,
                });
            }
        }
        for (i, e) in edges.iter().enumerate() {
            if e.ord != i {
                return Err(StoreError::Unsorted { ord: e.ord });
            }
            if i > 0 && edges[i - 1].t > e.t {
                return Err(StoreError::Unsorted { ord: e.ord });
            }
            for node in [e.src, e.dst] {
                if node as usize >= n {
                    return Err(StoreError::NodeOutOfRange {
                        ord: e.ord,
                        node,
                        num_nodes: n,
                    });
                }
            }
            if meta.bipartite && !meta.is_destination(e.dst) {
                return Err(StoreError::NotInDestinationPartition {
                    ord: e.ord,
                    node: e.dst,
                });
            }
        }

        let outgoing = Csr::build(edges, n, |e| e.src, |e| e.dst);
        let incoming = Csr::build(edges, n, |e| e.dst, |e| e.src);
        let mut by_pair = outgoing.clone();
        for node in 0..n {
            let (a, b) = (by_pair.offsets[node], by_pair.offsets[node + 1]);
            // Stable: equal peers keep their (t, ord) order.
            by_pair.events[a..b].sort_by_key(|e| e.peer);
        }
        Ok(Self {
            meta,
            num_edges: edges.len(),
            outgoing,
            incoming,
            by_pair,
        })
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn num_nodes(&self) -> usize {
        self.meta.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Full event list of `node` in the given role, sorted by `(t, ord)`.
    pub fn events(&self, node: NodeId, role: Role) -> &[Event] {
        match role {
            Role::Source => self.outgoing.list(node),
            Role::Destination => self.incoming.list(node),
        }
    }

    /// The `k` most recent source-role events of `node` strictly before `t`,
    /// oldest first.
    pub fn recent_neighbors(&self, node: NodeId, t: Timestamp, k: usize) -> &[Event] {
        let list = self.outgoing.list(node);
        let cut = cut_before(list, t);
        &list[cut.saturating_sub(k)..cut]
    }

    /// Number of source-role events of `node` strictly before `t`.
    pub fn history_len(&self, node: NodeId, t: Timestamp) -> usize {
        cut_before(self.outgoing.list(node), t)
    }

    /// Latest event time strictly before `t` over both roles.
    pub fn last_activity(&self, node: NodeId, t: Timestamp) -> Option<Timestamp> {
        let latest = |list: &[Event]| {
            let cut = cut_before(list, t);
            (cut > 0).then(|| list[cut - 1].t)
        };
        match (
            latest(self.outgoing.list(node)),
            latest(self.incoming.list(node)),
        ) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    /// Number of directed edges `s -> d` strictly before `t`.
    pub fn repeat_count(&self, s: NodeId, d: NodeId, t: Timestamp) -> usize {
        let list = self.by_pair.list(s);
        let lo = list.partition_point(|e| e.peer < d);
        let hi = list.partition_point(|e| e.peer <= d);
        cut_before(&list[lo..hi], t)
    }

    /// Destinations of edges `s -> *` at exactly time `t`.
    pub fn destinations_at(&self, s: NodeId, t: Timestamp) -> impl Iterator<Item = NodeId> + '_ {
        let list = self.outgoing.list(s);
        let lo = cut_before(list, t);
        let hi = list.partition_point(|e| e.t <= t);
        list[lo..hi].iter().map(|e| e.peer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(triples: &[(NodeId, NodeId, Timestamp)], n: usize) -> NeighborIndex {
        NeighborIndex::build(&edges_from_triples(triples), GraphMeta::homogeneous(n)).unwrap()
    }

    #[test]
    fn builds_role_lists() {
        let idx = index(&[(0, 1, 5), (0, 2, 7)], 3);
        let out: Vec<_> = idx
            .events(0, Role::Source)
            .iter()
            .map(|e| (e.peer, e.t))
            .collect();
        assert_eq!(out, vec![(1, 5), (2, 7)]);
        let inc: Vec<_> = idx
            .events(1, Role::Destination)
            .iter()
            .map(|e| (e.peer, e.t))
            .collect();
        assert_eq!(inc, vec![(0, 5)]);
    }

    #[test]
    fn empty_edge_list() {
        let idx = index(&[], 4);
        for n in 0..4 {
            assert!(idx.events(n, Role::Source).is_empty());
            assert!(idx.events(n, Role::Destination).is_empty());
            assert!(idx.recent_neighbors(n, 100, 3).is_empty());
            assert_eq!(idx.last_activity(n, 100), None);
        }
    }

    #[test]
    fn rejects_unsorted_and_out_of_range() {
        let mut edges = edges_from_triples(&[(0, 1, 5), (0, 2, 3), (1, 2, 9)]);
        let err = NeighborIndex::build(&edges, GraphMeta::homogeneous(3)).unwrap_err();
        assert_eq!(err, StoreError::Unsorted { ord: 1 });
        edges[1].t = 6;
        edges[2].dst = 7;
        let err = NeighborIndex::build(&edges, GraphMeta::homogeneous(3)).unwrap_err();
        assert!(matches!(
            err,
            StoreError::NodeOutOfRange {
                ord: 2,
                node: 7,
                ..
            }
        ));
    }

    #[test]
    fn bipartite_destinations_must_be_in_partition() {
        let edges = edges_from_triples(&[(0, 2, 1), (1, 0, 2)]);
        let err = NeighborIndex::build(&edges, GraphMeta::bipartite(2, 1)).unwrap_err();
        assert_eq!(
            err,
            StoreError::NotInDestinationPartition { ord: 1, node: 0 }
        );
    }

    #[test]
    fn recent_neighbors_is_strict_and_bounded() {
        let idx = index(&[(0, 1, 1), (0, 2, 3), (0, 3, 5), (0, 4, 9)], 5);
        let got: Vec<_> = idx
            .recent_neighbors(0, 6, 2)
            .iter()
            .map(|e| (e.peer, e.t))
            .collect();
        assert_eq!(got, vec![(2, 3), (3, 5)]);
        assert!(idx.recent_neighbors(0, 1, 2).is_empty());
        assert_eq!(idx.recent_neighbors(0, 100, 10).len(), 4);
    }

    #[test]
    fn last_activity_merges_roles() {
        let idx = index(&[(0, 1, 5), (1, 2, 8)], 3);
        assert_eq!(idx.last_activity(1, 10), Some(8));
        assert_eq!(idx.last_activity(1, 8), Some(5));
        assert_eq!(idx.last_activity(1, 5), None);
        assert_eq!(idx.last_activity(2, 9), Some(8));
    }

    #[test]
    fn repeat_count_is_directed_and_strict() {
        let idx = index(&[(0, 1, 2), (0, 1, 4), (1, 0, 6)], 2);
        assert_eq!(idx.repeat_count(0, 1, 5), 2);
        assert_eq!(idx.repeat_count(0, 1, 2), 0);
        assert_eq!(idx.repeat_count(1, 0, 7), 1);
        assert_eq!(idx.repeat_count(1, 0, 6), 0);
    }

    #[test]
    fn ties_are_ordered_by_ordinal() {
        let idx = index(&[(0, 3, 4), (0, 1, 4), (0, 2, 4)], 4);
        let peers: Vec<_> = idx.events(0, Role::Source).iter().map(|e| e.peer).collect();
        assert_eq!(peers, vec![3, 1, 2]);
        let mut at: Vec<_> = idx.destinations_at(0, 4).collect();
        at.sort();
        assert_eq!(at, vec![1, 2, 3]);
        assert_eq!(idx.destinations_at(0, 3).count(), 0);
    }
}
