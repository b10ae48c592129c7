//! Bipartite representation of the hypergraph and the partition state.
//!
//! Data vertices and queries get dense internal ids (`u32`); external
//! (source) ids are kept only for the I/O boundary. Adjacency is stored
//! CSR-style in both directions with sorted rows, so neighbor scans are
//! cache-friendly and common-query counting can use sorted intersection.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Errors from graph construction and partition-state updates.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("bucket count must be at least 2, got {0}")]
    BucketCountTooSmall(u32),
    #[error("bucket count {k} exceeds the number of data vertices {n}")]
    TooManyBuckets { k: u32, n: usize },
    #[error("move of vertex {vertex} to bucket {target} is not allowed")]
    DisallowedMove { vertex: u32, target: u32 },
    #[error("vertex id {0} out of range")]
    VertexOutOfRange(u32),
    #[error("bucket id {bucket} out of range for k = {k}")]
    BucketOutOfRange { bucket: u32, k: u32 },
    #[error("assignment covers {got} data vertices, expected {expected}")]
    IncompleteAssignment { got: usize, expected: usize },
    #[error("balance is infeasible: total capacity {capacity} < {n} data vertices")]
    InfeasibleBalance { capacity: u64, n: usize },
    #[error("score parameters out of range (p in (0,1], t >= 1)")]
    InvalidScore,
    #[error("split arity must be at least 2, got {0}")]
    ArityTooSmall(u32),
}

/// Immutable bipartite adjacency between queries and data vertices.
///
/// Invariants established by [`build_graph`]:
/// * both CSR directions describe the same edge set, rows sorted;
/// * no duplicate edges, every query has degree ≥ 2;
/// * internal ids are dense in `[0, num_queries)` / `[0, num_data)`.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    query_offsets: Vec<usize>,
    query_adj: Vec<u32>,
    data_offsets: Vec<usize>,
    data_adj: Vec<u32>,
    ext_queries: Vec<u64>,
    ext_data: Vec<u64>,
}

impl BipartiteGraph {
    pub fn num_queries(&self) -> usize {
        self.ext_queries.len()
    }

    pub fn num_data(&self) -> usize {
        self.ext_data.len()
    }

    pub fn num_edges(&self) -> usize {
        self.query_adj.len()
    }

    /// Data vertices adjacent to query `q`, ascending.
    #[inline]
    pub fn query_neighbors(&self, q: u32) -> &[u32] {
        &self.query_adj[self.query_offsets[q as usize]..self.query_offsets[q as usize + 1]]
    }

    /// Queries adjacent to data vertex `v`, ascending.
    #[inline]
    pub fn data_neighbors(&self, v: u32) -> &[u32] {
        &self.data_adj[self.data_offsets[v as usize]..self.data_offsets[v as usize + 1]]
    }

    #[inline]
    pub fn query_degree(&self, q: u32) -> usize {
        self.query_neighbors(q).len()
    }

    #[inline]
    pub fn data_degree(&self, v: u32) -> usize {
        self.data_neighbors(v).len()
    }

    /// Largest query degree (0 on a graph with no queries).
    pub fn max_query_degree(&self) -> usize {
        (0..self.num_queries() as u32)
            .map(|q| self.query_degree(q))
            .max()
            .unwrap_or(0)
    }

    pub fn external_query_id(&self, q: u32) -> u64 {
        self.ext_queries[q as usize]
    }

    pub fn external_data_id(&self, v: u32) -> u64 {
        self.ext_data[v as usize]
    }

    /// Internal data id for an external id, if present.
    pub fn resolve_data_id(&self, external: u64) -> Option<u32> {
        // ext_data is ascending by construction
        self.ext_data.binary_search(&external).ok().map(|i| i as u32)
    }

    /// The edge set as (query, data) pairs of internal ids.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_queries() as u32)
            .flat_map(move |q| self.query_neighbors(q).iter().map(move |&v| (q, v)))
    }
}

/// Builds the bipartite graph from raw (queryId, dataId) pairs.
///
/// Duplicate edges are removed; queries left with degree < 2 are dropped
/// (a single-vertex hyperedge has fanout 1 in every partition). Data ids
/// that only appeared in dropped queries are kept as isolated vertices:
/// they still occupy bucket capacity. Internal ids are assigned in
/// ascending external-id order, so construction is deterministic.
pub fn build_graph(edges: &[(u64, u64)]) -> Result<BipartiteGraph, GraphError> {
    if edges.is_empty() {
        return Err(GraphError::EmptyEdgeList);
    }

    let mut pairs: Vec<(u64, u64)> = edges.to_vec();
    pairs.sort_unstable();
    pairs.dedup();

    let mut ext_data: Vec<u64> = pairs.iter().map(|&(_, d)| d).collect();
    ext_data.sort_unstable();
    ext_data.dedup();

    // Keep only queries that still have >= 2 distinct data neighbors.
    let mut ext_queries: Vec<u64> = Vec::new();
    let mut query_offsets: Vec<usize> = vec![0];
    let mut query_adj: Vec<u32> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let q = pairs[i].0;
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == q {
            j += 1;
        }
        if j - i >= 2 {
            ext_queries.push(q);
            for &(_, d) in &pairs[i..j] {
                let internal = ext_data.binary_search(&d).expect("data id present") as u32;
                query_adj.push(internal);
            }
            // rows are already ascending: data ids sorted within a query group
            query_offsets.push(query_adj.len());
        }
        i = j;
    }

    // Transpose to the data -> query direction.
    let mut data_degree = vec![0usize; ext_data.len()];
    for &v in &query_adj {
        data_degree[v as usize] += 1;
    }
    let mut data_offsets = vec![0usize; ext_data.len() + 1];
    for v in 0..ext_data.len() {
        data_offsets[v + 1] = data_offsets[v] + data_degree[v];
    }
    let mut data_adj = vec![0u32; query_adj.len()];
    let mut cursor = data_offsets.clone();
    for q in 0..ext_queries.len() {
        for &v in &query_adj[query_offsets[q]..query_offsets[q + 1]] {
            data_adj[cursor[v as usize]] = q as u32;
            cursor[v as usize] += 1;
        }
    }
    // scanning queries in ascending order leaves each data row sorted

    Ok(BipartiteGraph {
        query_offsets,
        query_adj,
        data_offsets,
        data_adj,
        ext_queries,
        ext_data,
    })
}

/// Balance constraint: every bucket may hold at most `floor((1+ε)·n/k)`
/// vertices, `n` being the number of data vertices under consideration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceSpec {
    pub epsilon: f64,
}

impl BalanceSpec {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon }
    }

    /// Per-bucket capacity for `n` vertices in `k` buckets.
    pub fn capacity(&self, n: usize, k: u32) -> u64 {
        // nonnegative, so the cast truncation is the floor
        ((1.0 + self.epsilon) * n as f64 / f64::from(k)) as u64
    }

    /// Errors if `k` buckets of this capacity cannot hold `n` vertices.
    pub fn check_feasible(&self, n: usize, k: u32) -> Result<u64, GraphError> {
        let cap = self.capacity(n, k);
        let total = cap.saturating_mul(u64::from(k));
        if total < n as u64 {
            return Err(GraphError::InfeasibleBalance { capacity: total, n });
        }
        Ok(cap)
    }
}

/// Which buckets each data vertex may occupy.
///
/// Recursive partitioning constrains every vertex to the children of its
/// current bucket; the sibling sets are captured here as disjoint groups.
/// A vertex's allowed set is the group of its *current* bucket, which is
/// stable because moves never leave the group.
#[derive(Debug, Clone)]
pub enum AllowedTargets {
    /// Every bucket is allowed (direct k-way mode).
    All,
    /// Buckets are partitioned into disjoint sibling groups.
    Grouped(BucketGroups),
}

#[derive(Debug, Clone)]
pub struct BucketGroups {
    /// bucket -> group index
    group_of: Vec<u32>,
    /// group -> member buckets (ascending), CSR-style
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl BucketGroups {
    /// Build groups from a `bucket -> group` map. Group ids must be dense.
    pub fn new(group_of: Vec<u32>) -> Self {
        let num_groups = group_of.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
        let mut counts = vec![0usize; num_groups];
        for &g in &group_of {
            counts[g as usize] += 1;
        }
        let mut offsets = vec![0usize; num_groups + 1];
        for g in 0..num_groups {
            offsets[g + 1] = offsets[g] + counts[g];
        }
        let mut members = vec![0u32; group_of.len()];
        let mut cursor = offsets.clone();
        for (bucket, &g) in group_of.iter().enumerate() {
            members[cursor[g as usize]] = bucket as u32;
            cursor[g as usize] += 1;
        }
        Self { group_of, offsets, members }
    }

    #[inline]
    pub fn group_of(&self, bucket: u32) -> u32 {
        self.group_of[bucket as usize]
    }

    #[inline]
    pub fn members(&self, group: u32) -> &[u32] {
        &self.members[self.offsets[group as usize]..self.offsets[group as usize + 1]]
    }

    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Assignment of data vertices to buckets, with bucket sizes kept
/// incrementally consistent.
#[derive(Debug, Clone)]
pub struct PartitionState {
    bucket_of: Vec<u32>,
    k: u32,
    bucket_sizes: Vec<u32>,
    allowed: AllowedTargets,
}

impl PartitionState {
    /// Wraps an explicit assignment, validating ranges and rebuilding sizes.
    pub fn from_assignment(assignment: Vec<u32>, k: u32) -> Result<Self, GraphError> {
        if k == 0 {
            return Err(GraphError::BucketCountTooSmall(k));
        }
        let mut bucket_sizes = vec![0u32; k as usize];
        for &b in &assignment {
            if b >= k {
                return Err(GraphError::BucketOutOfRange { bucket: b, k });
            }
            bucket_sizes[b as usize] += 1;
        }
        Ok(Self { bucket_of: assignment, k, bucket_sizes, allowed: AllowedTargets::All })
    }

    #[inline]
    pub fn bucket_of(&self, v: u32) -> u32 {
        self.bucket_of[v as usize]
    }

    pub fn assignment(&self) -> &[u32] {
        &self.bucket_of
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn bucket_sizes(&self) -> &[u32] {
        &self.bucket_sizes
    }

    pub fn num_data(&self) -> usize {
        self.bucket_of.len()
    }

    pub fn allowed(&self) -> &AllowedTargets {
        &self.allowed
    }

    pub fn set_allowed(&mut self, allowed: AllowedTargets) {
        self.allowed = allowed;
    }

    /// Whether `v` may occupy `target`.
    pub fn is_allowed(&self, v: u32, target: u32) -> bool {
        if target >= self.k {
            return false;
        }
        match &self.allowed {
            AllowedTargets::All => true,
            AllowedTargets::Grouped(groups) => {
                groups.group_of(target) == groups.group_of(self.bucket_of(v))
            }
        }
    }

    /// Applies a batch of moves atomically: if any move is disallowed the
    /// whole batch is rejected and the state is untouched.
    pub fn apply_moves(&mut self, moves: &[(u32, u32)]) -> Result<(), GraphError> {
        for &(v, target) in moves {
            if v as usize >= self.bucket_of.len() {
                return Err(GraphError::VertexOutOfRange(v));
            }
            if target >= self.k {
                return Err(GraphError::BucketOutOfRange { bucket: target, k: self.k });
            }
            if !self.is_allowed(v, target) {
                return Err(GraphError::DisallowedMove { vertex: v, target });
            }
        }
        for &(v, target) in moves {
            let from = self.bucket_of[v as usize];
            if from != target {
                self.bucket_sizes[from as usize] -= 1;
                self.bucket_sizes[target as usize] += 1;
                self.bucket_of[v as usize] = target;
            }
        }
        Ok(())
    }

    /// Unchecked single move; caller guarantees validity. Internal use by
    /// the refinement loop, which validates at directive-computation time.
    pub(crate) fn move_unchecked(&mut self, v: u32, target: u32) {
        let from = self.bucket_of[v as usize];
        debug_assert!(self.is_allowed(v, target));
        if from != target {
            self.bucket_sizes[from as usize] -= 1;
            self.bucket_sizes[target as usize] += 1;
            self.bucket_of[v as usize] = target;
        }
    }
}

/// Assigns every data vertex an independent uniform bucket in `[0, k)`.
///
/// Deterministic for a fixed seed. Note the result is balanced only up to
/// binomial fluctuation; the refinement loop repairs any capacity
/// violations on its first iteration.
pub fn init_random_partition(
    g: &BipartiteGraph,
    k: u32,
    seed: u64,
) -> Result<PartitionState, GraphError> {
    if k < 2 {
        return Err(GraphError::BucketCountTooSmall(k));
    }
    if k as usize > g.num_data() {
        return Err(GraphError::TooManyBuckets { k, n: g.num_data() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bucket_sizes = vec![0u32; k as usize];
    let bucket_of: Vec<u32> = (0..g.num_data())
        .map(|_| {
            let b = rng.random_range(0..k);
            bucket_sizes[b as usize] += 1;
            b
        })
        .collect();
    Ok(PartitionState { bucket_of, k, bucket_sizes, allowed: AllowedTargets::All })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{sample_edges, sample_state};

    #[test]
    fn builds_sample_graph() {
        let g = build_graph(&sample_edges()).unwrap();
        assert_eq!(g.num_queries(), 3);
        assert_eq!(g.num_data(), 6);
        assert_eq!(g.num_edges(), 10);
        // adjacency is mutually consistent
        for (q, v) in g.edges() {
            assert!(g.data_neighbors(v).contains(&q));
        }
        for v in 0..g.num_data() as u32 {
            for &q in g.data_neighbors(v) {
                assert!(g.query_neighbors(q).contains(&v));
            }
        }
    }

    #[test]
    fn drops_degree_one_queries_keeps_isolated_data() {
        let g = build_graph(&[(7, 1)]).unwrap();
        assert_eq!(g.num_queries(), 0);
        assert_eq!(g.num_data(), 1);
        assert_eq!(g.data_degree(0), 0);
    }

    #[test]
    fn dedup_can_rescue_degree() {
        // duplicate (qA,1) edges collapse; qA keeps distinct degree 2
        let g = build_graph(&[(5, 1), (5, 1), (5, 2)]).unwrap();
        assert_eq!(g.num_queries(), 1);
        assert_eq!(g.query_degree(0), 2);
    }

    #[test]
    fn rejects_empty_edge_list() {
        assert!(matches!(build_graph(&[]), Err(GraphError::EmptyEdgeList)));
    }

    #[test]
    fn degree_sums_agree() {
        let g = build_graph(&sample_edges()).unwrap();
        let qsum: usize = (0..g.num_queries() as u32).map(|q| g.query_degree(q)).sum();
        let dsum: usize = (0..g.num_data() as u32).map(|v| g.data_degree(v)).sum();
        assert_eq!(qsum, g.num_edges());
        assert_eq!(dsum, g.num_edges());
    }

    #[test]
    fn build_is_idempotent_on_own_edges() {
        let g = build_graph(&sample_edges()).unwrap();
        let internal: Vec<(u64, u64)> =
            g.edges().map(|(q, v)| (u64::from(q), u64::from(v))).collect();
        let g2 = build_graph(&internal).unwrap();
        assert_eq!(g.num_queries(), g2.num_queries());
        assert_eq!(g.num_data(), g2.num_data());
        for q in 0..g.num_queries() as u32 {
            assert_eq!(g.query_neighbors(q), g2.query_neighbors(q));
        }
    }

    #[test]
    fn random_init_is_deterministic() {
        let g = build_graph(&sample_edges()).unwrap();
        let a = init_random_partition(&g, 2, 99).unwrap();
        let b = init_random_partition(&g, 2, 99).unwrap();
        assert_eq!(a.assignment(), b.assignment());
        assert!(init_random_partition(&g, 1, 0).is_err());
    }

    #[test]
    fn random_init_concentrates() {
        // binomial concentration: |size - n/2| <= 3*sqrt(n/4) for n = 1e5
        let edges: Vec<(u64, u64)> = (0..100_000u64).map(|v| (v / 2, v)).collect();
        let g = build_graph(&edges).unwrap();
        assert_eq!(g.num_data(), 100_000);
        let s = init_random_partition(&g, 2, 12345).unwrap();
        let dev = (f64::from(s.bucket_sizes()[0]) - 50_000.0).abs();
        assert!(dev <= 3.0 * (100_000.0f64 * 0.25).sqrt(), "deviation {dev}");
    }

    #[test]
    fn apply_moves_updates_sizes() {
        let g = build_graph(&sample_edges()).unwrap();
        let mut s = sample_state(&g);
        assert_eq!(s.bucket_sizes(), &[3, 3]);
        // moving a vertex to its own bucket changes nothing
        let before = s.clone();
        s.apply_moves(&[(0, s.bucket_of(0))]).unwrap();
        assert_eq!(s.assignment(), before.assignment());
        assert_eq!(s.bucket_sizes(), before.bucket_sizes());
        // vertex "3" (external) from bucket 0 to 1 -> sizes (2, 4)
        let v3 = g.resolve_data_id(3).unwrap();
        s.apply_moves(&[(v3, 1)]).unwrap();
        assert_eq!(s.bucket_sizes(), &[2, 4]);
    }

    #[test]
    fn apply_moves_is_atomic() {
        let g = build_graph(&sample_edges()).unwrap();
        let mut s = sample_state(&g);
        s.set_allowed(AllowedTargets::Grouped(BucketGroups::new(vec![0, 1])));
        // second move is disallowed (crosses groups): whole batch rejected
        let err = s.apply_moves(&[(0, 0), (1, 1)]).unwrap_err();
        assert!(matches!(err, GraphError::DisallowedMove { .. }));
        assert_eq!(s.bucket_sizes(), &[3, 3]);
    }

    #[test]
    fn sizes_stay_consistent_under_moves() {
        let g = build_graph(&sample_edges()).unwrap();
        let mut s = init_random_partition(&g, 3, 7).unwrap();
        for (i, v) in (0..g.num_data() as u32).enumerate() {
            s.apply_moves(&[(v, (i % 3) as u32)]).unwrap();
            let mut recount = vec![0u32; 3];
            for &b in s.assignment() {
                recount[b as usize] += 1;
            }
            assert_eq!(&recount, s.bucket_sizes());
        }
    }

    #[test]
    fn balance_feasibility() {
        let spec = BalanceSpec::new(0.05);
        assert_eq!(spec.capacity(6, 2), 3);
        assert!(spec.check_feasible(6, 2).is_ok());
        // 5 vertices, 2 buckets, eps 0 -> capacity 2+2 < 5
        assert!(BalanceSpec::new(0.0).check_feasible(5, 2).is_err());
    }
}
