//! Balanced k-way hypergraph partitioning that minimizes query fanout.
//!
//! The hypergraph is modeled as a bipartite graph between *queries* and
//! *data vertices*; a hyperedge is the neighborhood of one query. The
//! partitioner assigns data vertices to `k` buckets under a balance
//! constraint while minimizing the average number of buckets each query
//! touches (its fanout), by iterative vertex-centric local search on a
//! smoothed *probabilistic fanout* objective.
//!
//! The crate is organized around the moving parts of one refinement
//! iteration:
//!
//! * [`graph`] — immutable bipartite adjacency and mutable partition state;
//! * [`objective`] — the bucket-score family (p-fanout, recursive
//!   approximation, plain fanout) and exact move gains;
//! * [`hist`] — exponential gain histograms and the pairwise bin matching
//!   that decides balanced swaps;
//! * [`engine`] — a deterministic in-process bulk-synchronous executor with
//!   message accounting;
//! * [`refine`] — the full refinement loop: propose, match, move, converge;
//! * [`recurse`] — direct k-way and recursive r-ary drivers;
//! * [`metrics`] — partition quality evaluation independent of the search.
//!
//! Everything is deterministic for a fixed seed: results are bit-identical
//! across worker counts. The crate is `no_std`-compatible (with `alloc`);
//! the default `std` feature adds a thread-pool executor and a wall clock.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod engine;
pub mod graph;
pub mod hist;
pub mod metrics;
pub mod objective;
pub mod recurse;
pub mod refine;

mod mix;

#[cfg(test)]
pub(crate) mod testutil;

pub use engine::{
    lazy_recompute, Clock, DirtySets, Engine, Executor, IterationOutput, MessageCounters,
    NullClock, Proposal, ScoreSet, SerialExecutor, Superstep,
};
#[cfg(feature = "std")]
pub use engine::{SystemClock, ThreadPool};
pub use graph::{
    build_graph, init_random_partition, AllowedTargets, BalanceSpec, BipartiteGraph, BucketGroups,
    GraphError, PartitionState,
};
pub use hist::{gain_bin, match_histograms, GainHistogram, MoveDirective};
pub use metrics::{evaluate, MetricsReport};
pub use objective::{
    clique_weight, move_gain, score_query, soed, total_objective, weighted_edge_cut, NeighborData,
    ScoreFunction, ScoreTable,
};
pub use recurse::{
    direct_partition, direct_partition_from, recursive_partition, RecursionPlan,
};
pub use refine::{
    apply_directives, epsilon_schedule, plan_moves, refine_loop, select_target, IterationRow,
    LevelInfo, MoveMode, MovePlan, RefineParams, Trace,
};
