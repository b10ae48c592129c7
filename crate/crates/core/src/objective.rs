//! The bucket-score objective family and exact move gains.
//!
//! A query `q` with `n_b(q)` neighbors in bucket `b` contributes
//! `f(n_b(q))` per bucket, where `f` is one of:
//!
//! * `PFanout { p }`: `f(n) = 1 − (1−p)^n`, the expected number of buckets
//!   contacted when each needed vertex is required independently with
//!   probability `p`. At `p = 1` this is exactly the plain fanout.
//! * `RecursiveApprox { p, t }`: `f(n) = t·(1 − (1 − p/t)^n)`, a pessimistic
//!   estimate of the final p-fanout contribution of a bucket that will
//!   later be split into `t` buckets.
//! * `ExactFanout`: `f(n) = 1` for `n ≥ 1`, the plain bucket count.
//!
//! Powers are precomputed per degree (the hot path never calls `powf`),
//! clamped to zero below 1e-300 to avoid subnormal noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{BipartiteGraph, PartitionState};

/// Value clamp for the geometric tails of the score tables.
const POW_CLAMP: f64 = 1e-300;

/// The objective family. See the module docs for the formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreFunction {
    PFanout { p: f64 },
    RecursiveApprox { p: f64, t: u32 },
    ExactFanout,
}

impl ScoreFunction {
    /// The fanout probability backing this score, if any.
    pub fn p(&self) -> Option<f64> {
        match *self {
            ScoreFunction::PFanout { p } | ScoreFunction::RecursiveApprox { p, .. } => Some(p),
            ScoreFunction::ExactFanout => None,
        }
    }

    /// Parameter sanity: `p ∈ (0, 1]`, `t ≥ 1`.
    pub fn is_valid(&self) -> bool {
        match *self {
            ScoreFunction::PFanout { p } => p > 0.0 && p <= 1.0,
            ScoreFunction::RecursiveApprox { p, t } => p > 0.0 && p <= 1.0 && t >= 1,
            ScoreFunction::ExactFanout => true,
        }
    }
}

/// `f(n)` tabulated for `n` in `0..=max_n+1`.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    values: Vec<f64>,
}

impl ScoreTable {
    /// Tabulates `score` up to `max_n` (the largest query degree the table
    /// will be asked about; one extra slot covers `f(n+1)` in gain terms).
    pub fn build(score: &ScoreFunction, max_n: usize) -> Self {
        debug_assert!(score.is_valid(), "invalid score parameters: {score:?}");
        let len = max_n + 2;
        let mut values = vec![0.0f64; len];
        match *score {
            ScoreFunction::PFanout { p } => {
                let base = 1.0 - p;
                let mut pow = 1.0f64;
                for v in values.iter_mut() {
                    *v = 1.0 - pow;
                    pow *= base;
                    if pow < POW_CLAMP {
                        pow = 0.0;
                    }
                }
            }
            ScoreFunction::RecursiveApprox { p, t } => {
                let t = f64::from(t);
                let base = 1.0 - p / t;
                let mut pow = 1.0f64;
                for v in values.iter_mut() {
                    *v = t * (1.0 - pow);
                    pow *= base;
                    if pow < POW_CLAMP {
                        pow = 0.0;
                    }
                }
            }
            ScoreFunction::ExactFanout => {
                for v in values.iter_mut().skip(1) {
                    *v = 1.0;
                }
            }
        }
        Self { values }
    }

    /// `f(n)`.
    #[inline]
    pub fn score(&self, n: u32) -> f64 {
        self.values[n as usize]
    }

    /// `f(n) − f(n−1)`: objective relief from removing one vertex out of a
    /// bucket holding `n ≥ 1` of the query's neighbors.
    #[inline]
    pub fn removal_relief(&self, n: u32) -> f64 {
        self.values[n as usize] - self.values[n as usize - 1]
    }

    /// `f(n) − f(n+1)`: objective cost (≤ 0) of adding one vertex to a
    /// bucket holding `n` of the query's neighbors.
    #[inline]
    pub fn insertion_cost(&self, n: u32) -> f64 {
        self.values[n as usize] - self.values[n as usize + 1]
    }

    /// `f(1)`.
    #[inline]
    pub fn single(&self) -> f64 {
        self.values[1]
    }

    pub fn max_n(&self) -> usize {
        self.values.len() - 2
    }
}

/// Per-query sparse bucket counts `n_b(q)`, only nonzero entries, sorted by
/// bucket id. This is the "neighbor data" queries broadcast to their data
/// vertices each iteration.
#[derive(Debug, Clone)]
pub struct NeighborData {
    rows: Vec<Vec<(u32, u32)>>,
}

impl NeighborData {
    pub fn build(g: &BipartiteGraph, s: &PartitionState) -> Self {
        let mut rows = Vec::with_capacity(g.num_queries());
        for q in 0..g.num_queries() as u32 {
            rows.push(Self::row_for(g, s, q));
        }
        Self { rows }
    }

    pub(crate) fn empty() -> Self {
        Self { rows: Vec::new() }
    }

    pub(crate) fn from_rows(rows: Vec<Vec<(u32, u32)>>) -> Self {
        Self { rows }
    }

    pub(crate) fn row_for(g: &BipartiteGraph, s: &PartitionState, q: u32) -> Vec<(u32, u32)> {
        let mut buckets: Vec<u32> = g.query_neighbors(q).iter().map(|&v| s.bucket_of(v)).collect();
        buckets.sort_unstable();
        let mut row: Vec<(u32, u32)> = Vec::new();
        for b in buckets {
            match row.last_mut() {
                Some((last, c)) if *last == b => *c += 1,
                _ => row.push((b, 1)),
            }
        }
        row
    }

    /// Nonzero `(bucket, count)` entries for query `q`, ascending by bucket.
    #[inline]
    pub fn counts(&self, q: u32) -> &[(u32, u32)] {
        &self.rows[q as usize]
    }

    /// `n_b(q)`, zero when the bucket is untouched.
    pub fn count_in(&self, q: u32, bucket: u32) -> u32 {
        let row = &self.rows[q as usize];
        match row.binary_search_by_key(&bucket, |&(b, _)| b) {
            Ok(i) => row[i].1,
            Err(_) => 0,
        }
    }

    /// Number of distinct buckets the query touches.
    #[inline]
    pub fn fanout(&self, q: u32) -> usize {
        self.rows[q as usize].len()
    }

    /// Applies one neighbor's move to the counts of query `q`.
    pub fn apply_move(&mut self, q: u32, from: u32, to: u32) {
        if from == to {
            return;
        }
        let row = &mut self.rows[q as usize];
        let i = row
            .binary_search_by_key(&from, |&(b, _)| b)
            .expect("moved vertex was counted in its source bucket");
        if row[i].1 == 1 {
            row.remove(i);
        } else {
            row[i].1 -= 1;
        }
        match row.binary_search_by_key(&to, |&(b, _)| b) {
            Ok(j) => row[j].1 += 1,
            Err(j) => row.insert(j, (to, 1)),
        }
    }

    pub fn num_queries(&self) -> usize {
        self.rows.len()
    }
}

/// Score of one query given its nonzero bucket counts.
pub fn score_query(counts: &[(u32, u32)], table: &ScoreTable) -> f64 {
    counts.iter().map(|&(_, c)| table.score(c)).sum()
}

/// Average query score under `score`: `(1/|Q|)·Σ_q Σ_b f(n_b(q))`.
/// Zero queries yield 0 by convention.
pub fn total_objective(g: &BipartiteGraph, s: &PartitionState, score: &ScoreFunction) -> f64 {
    if g.num_queries() == 0 {
        return 0.0;
    }
    let table = ScoreTable::build(score, g.max_query_degree());
    let mut sum = 0.0;
    for q in 0..g.num_queries() as u32 {
        sum += score_query(&NeighborData::row_for(g, s, q), &table);
    }
    sum / g.num_queries() as f64
}

/// Penalty charge for a prospective move under movement penalty `lambda`:
/// leaving the initial bucket costs `lambda`, returning to it recovers it.
/// The result is *subtracted* from the move gain.
#[inline]
pub fn movement_penalty_charge(lambda: f64, initial: u32, from: u32, to: u32) -> f64 {
    if from == initial && to != initial {
        lambda
    } else if to == initial && from != initial {
        -lambda
    } else {
        0.0
    }
}

/// Exact decrease of `|Q|·totalObjective` if `v` alone moved `from → to`
/// against the `nd` snapshot; positive means the move improves the
/// objective. `penalty` is subtracted as-is (see
/// [`movement_penalty_charge`]). Moving a vertex onto its own bucket has
/// gain 0.
pub fn move_gain(
    g: &BipartiteGraph,
    v: u32,
    from: u32,
    to: u32,
    nd: &NeighborData,
    score: &ScoreFunction,
    penalty: f64,
) -> f64 {
    let table = ScoreTable::build(score, g.max_query_degree());
    move_gain_tabled(g, v, from, to, nd, &table, &table, penalty)
}

/// [`move_gain`] against prebuilt tables (`table_from` scores the source
/// bucket, `table_to` the target; they differ only in recursive mode when
/// sibling buckets face different remaining split factors).
///
/// The summation order here (own-bucket relief and target cost accumulated
/// separately over `N(v)`, grouped-zero form for the target) is exactly the
/// order the engine uses, so both paths agree bit-for-bit.
pub fn move_gain_tabled(
    g: &BipartiteGraph,
    v: u32,
    from: u32,
    to: u32,
    nd: &NeighborData,
    table_from: &ScoreTable,
    table_to: &ScoreTable,
    penalty: f64,
) -> f64 {
    if from == to {
        return 0.0;
    }
    let mut relief = 0.0f64;
    let mut cost = 0.0f64;
    for &q in g.data_neighbors(v) {
        relief += table_from.removal_relief(nd.count_in(q, from));
        let c = nd.count_in(q, to);
        if c > 0 {
            cost += table_to.insertion_cost(c) + table_to.single();
        }
    }
    cost -= g.data_degree(v) as f64 * table_to.single();
    (relief + cost) - penalty
}

/// Number of queries shared by two distinct data vertices (the clique-net
/// edge weight). Adjacency rows are sorted, so this is a merge.
pub fn clique_weight(g: &BipartiteGraph, u: u32, v: u32) -> u64 {
    assert!(u != v, "clique weight is defined for distinct vertices");
    let (mut a, mut b) = (g.data_neighbors(u), g.data_neighbors(v));
    let mut shared = 0u64;
    while let (Some(&x), Some(&y)) = (a.first(), b.first()) {
        if x == y {
            shared += 1;
            a = &a[1..];
            b = &b[1..];
        } else if x < y {
            a = &a[1..];
        } else {
            b = &b[1..];
        }
    }
    shared
}

/// Sum of clique-net weights across bucket boundaries, computed per query
/// without materializing the clique graph: each query with counts `n_b`
/// contributes `Σ_{i<j} n_i·n_j = (deg² − Σ n_b²)/2` crossing pairs.
pub fn weighted_edge_cut(g: &BipartiteGraph, s: &PartitionState) -> u64 {
    let mut cut = 0u64;
    for q in 0..g.num_queries() as u32 {
        let deg = g.query_degree(q) as u64;
        let sq: u64 = NeighborData::row_for(g, s, q)
            .iter()
            .map(|&(_, c)| u64::from(c) * u64::from(c))
            .sum();
        cut += (deg * deg - sq) / 2;
    }
    cut
}

/// Sum of external degrees: unnormalized fanout plus the number of queries
/// spanning more than one bucket.
pub fn soed(g: &BipartiteGraph, s: &PartitionState) -> u64 {
    let mut total = 0u64;
    for q in 0..g.num_queries() as u32 {
        let fanout = NeighborData::row_for(g, s, q).len() as u64;
        total += fanout + u64::from(fanout > 1);
    }
    total
}
