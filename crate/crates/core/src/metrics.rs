//! Partition quality metrics, independent of how the partition was made.

use alloc::vec::Vec;

use crate::graph::{BipartiteGraph, PartitionState};
use crate::objective::{NeighborData, ScoreFunction, ScoreTable};

/// Everything worth knowing about one partition of one hypergraph.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "camelCase"))]
pub struct MetricsReport {
    /// Average number of buckets a query touches.
    pub average_fanout: f64,
    /// Average probabilistic fanout at probability `p`.
    pub p_fanout: f64,
    /// The probability `p_fanout` was evaluated at.
    pub p: f64,
    /// Sum of external degrees: unnormalized fanout plus cut hyperedges.
    pub soed: u64,
    /// Clique-net weight crossing bucket boundaries.
    pub weighted_edge_cut: u64,
    /// Queries spanning more than one bucket.
    pub hyperedge_cut: u64,
    /// `max_i size_i / (n/k) − 1`.
    pub max_imbalance: f64,
    pub bucket_sizes: Vec<u32>,
}

/// Computes every metric in one pass over the query adjacency.
pub fn evaluate(g: &BipartiteGraph, s: &PartitionState, p: f64) -> MetricsReport {
    let table = ScoreTable::build(&ScoreFunction::PFanout { p }, g.max_query_degree());
    let mut fanout_sum = 0u64;
    let mut p_fanout_sum = 0.0f64;
    let mut soed = 0u64;
    let mut cut = 0u64;
    let mut hyperedge_cut = 0u64;
    for q in 0..g.num_queries() as u32 {
        let row = NeighborData::row_for(g, s, q);
        let fanout = row.len() as u64;
        fanout_sum += fanout;
        hyperedge_cut += u64::from(fanout > 1);
        soed += fanout + u64::from(fanout > 1);
        let deg = g.query_degree(q) as u64;
        let mut sq = 0u64;
        for &(_, c) in &row {
            p_fanout_sum += table.score(c);
            sq += u64::from(c) * u64::from(c);
        }
        cut += (deg * deg - sq) / 2;
    }
    let nq = g.num_queries() as f64;
    let (average_fanout, p_fanout) = if g.num_queries() == 0 {
        (0.0, 0.0)
    } else {
        (fanout_sum as f64 / nq, p_fanout_sum / nq)
    };
    let ideal = s.num_data() as f64 / f64::from(s.k());
    let max_imbalance = s
        .bucket_sizes()
        .iter()
        .map(|&size| f64::from(size) / ideal - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    MetricsReport {
        average_fanout,
        p_fanout,
        p,
        soed,
        weighted_edge_cut: cut,
        hyperedge_cut,
        max_imbalance,
        bucket_sizes: s.bucket_sizes().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PartitionState;
    use crate::testutil::{random_instance, random_state, sample_graph, sample_state};

    #[test]
    fn sample_report() {
        let g = sample_graph();
        let s = sample_state(&g);
        let r = evaluate(&g, &s, 0.5);
        assert_eq!(r.average_fanout, 5.0 / 3.0);
        assert_eq!(r.soed, 7);
        assert_eq!(r.weighted_edge_cut, 5);
        assert_eq!(r.hyperedge_cut, 2);
        assert_eq!(r.bucket_sizes, vec![3, 3]);
        assert_eq!(r.max_imbalance, 0.0);
        assert_eq!(r.p_fanout, 3.5 / 3.0);
    }

    #[test]
    fn degenerate_partitions() {
        let g = sample_graph();
        let one = PartitionState::from_assignment(vec![0; 6], 1).unwrap();
        let r = evaluate(&g, &one, 0.5);
        assert_eq!(r.average_fanout, 1.0);
        assert_eq!(r.weighted_edge_cut, 0);
        assert_eq!(r.max_imbalance, 0.0);

        let singles = PartitionState::from_assignment((0..6).collect(), 6).unwrap();
        let r = evaluate(&g, &singles, 0.5);
        assert_eq!(r.average_fanout, 10.0 / 3.0);
    }

    #[test]
    fn p_one_equals_average_fanout() {
        for seed in 0..10 {
            let g = random_instance(20, 15, 6, seed);
            let s = random_state(20, 4, seed ^ 1);
            let r = evaluate(&g, &s, 1.0);
            assert_eq!(r.p_fanout, r.average_fanout, "seed {seed}");
        }
    }

    #[test]
    fn metrics_ignore_bucket_relabeling() {
        let g = random_instance(20, 15, 6, 3);
        let s = random_state(20, 4, 9);
        // swap labels 0 <-> 3
        let relabeled: Vec<u32> = s
            .assignment()
            .iter()
            .map(|&b| match b {
                0 => 3,
                3 => 0,
                other => other,
            })
            .collect();
        let s2 = PartitionState::from_assignment(relabeled, 4).unwrap();
        let a = evaluate(&g, &s, 0.5);
        let b = evaluate(&g, &s2, 0.5);
        assert_eq!(a.average_fanout, b.average_fanout);
        assert_eq!(a.p_fanout, b.p_fanout);
        assert_eq!(a.weighted_edge_cut, b.weighted_edge_cut);
        assert_eq!(a.soed, b.soed);
        assert_eq!(a.max_imbalance, b.max_imbalance);
    }
}
