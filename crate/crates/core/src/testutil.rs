//! Shared fixtures and independent oracles for the crate's tests.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{build_graph, BipartiteGraph, PartitionState};

/// The six-vertex, three-query sample used across the crate:
/// queries {1,2,6}, {1,2,3,4}, {4,5,6} over data vertices 1..=6.
/// With buckets {1,2,3} / {4,5,6} the query fanouts are 2, 2, 1.
pub(crate) fn sample_edges() -> Vec<(u64, u64)> {
    vec![
        (0, 1), (0, 2), (0, 6),
        (1, 1), (1, 2), (1, 3), (1, 4),
        (2, 4), (2, 5), (2, 6),
    ]
}

pub(crate) fn sample_graph() -> BipartiteGraph {
    build_graph(&sample_edges()).unwrap()
}

/// Buckets {1,2,3} / {4,5,6} on the sample graph.
pub(crate) fn sample_state(g: &BipartiteGraph) -> PartitionState {
    let assignment = (0..g.num_data() as u32)
        .map(|v| if g.external_data_id(v) <= 3 { 0 } else { 1 })
        .collect();
    PartitionState::from_assignment(assignment, 2).unwrap()
}

/// Random bipartite instance: `n` data vertices, `m` queries with degrees
/// in `[2, max_degree]`. Every query's neighbors are distinct.
pub(crate) fn random_instance(n: usize, m: usize, max_degree: usize, seed: u64) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for q in 0..m as u64 {
        let deg = rng.random_range(2..=max_degree.min(n));
        let mut picks: Vec<u64> = Vec::with_capacity(deg);
        while picks.len() < deg {
            let v = rng.random_range(0..n as u64);
            if !picks.contains(&v) {
                picks.push(v);
            }
        }
        for v in picks {
            edges.push((q, v));
        }
    }
    // Degree-1 dummy queries keep unsampled data vertices alive as isolated
    // vertices (the builder drops the queries but retains their data ids).
    for v in 0..n as u64 {
        edges.push((u64::MAX - v, v));
    }
    let g = build_graph(&edges).unwrap();
    debug_assert_eq!(g.num_data(), n);
    g
}

/// Random assignment of `n` vertices to `k` buckets (not balanced).
pub(crate) fn random_state(n: usize, k: u32, seed: u64) -> PartitionState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = (0..n).map(|_| rng.random_range(0..k)).collect();
    PartitionState::from_assignment(assignment, k).unwrap()
}
