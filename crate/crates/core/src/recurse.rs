//! Direct k-way and recursive r-ary partitioning drivers.
//!
//! Recursive mode splits every bucket into (up to) `r` children per level
//! until `k` buckets exist, re-running the refinement loop once per level
//! with vertices constrained to their bucket's children. Early levels get
//! a proportional share of the allowed imbalance so later splits retain
//! room to move, and buckets that will split further are scored with the
//! pessimistic final-fanout approximation rather than their current
//! p-fanout.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Clock, Executor, ScoreSet};
use crate::graph::{
    AllowedTargets, BipartiteGraph, BucketGroups, GraphError, PartitionState,
};
use crate::mix::splitmix64;
use crate::objective::ScoreFunction;
use crate::refine::{epsilon_schedule, refine_loop, run_level, LevelSetup, RefineParams, Trace};

/// One level of the split tree.
#[derive(Debug, Clone)]
pub struct PlanLevel {
    /// bucket -> parent bucket at the previous level (all zero on level 1).
    pub parent_of: Vec<u32>,
    /// bucket -> number of final buckets it still becomes (1 = final).
    pub t_of: Vec<u32>,
}

impl PlanLevel {
    pub fn bucket_count(&self) -> u32 {
        self.parent_of.len() as u32
    }
}

/// The split tree for partitioning into `k` buckets with arity `r`:
/// `ceil(log_r k)` levels, every bucket's remaining split factor, and the
/// parent links that constrain vertex movement.
#[derive(Debug, Clone)]
pub struct RecursionPlan {
    pub k: u32,
    pub r: u32,
    pub levels: Vec<PlanLevel>,
}

impl RecursionPlan {
    pub fn new(k: u32, r: u32) -> Result<Self, GraphError> {
        if k < 2 {
            return Err(GraphError::BucketCountTooSmall(k));
        }
        if r < 2 {
            return Err(GraphError::ArityTooSmall(r));
        }
        let mut levels = Vec::new();
        let mut current = vec![k]; // virtual root
        while current.iter().any(|&t| t > 1) {
            let mut parent_of = Vec::new();
            let mut t_of = Vec::new();
            for (parent, &t) in current.iter().enumerate() {
                if t == 1 {
                    parent_of.push(parent as u32);
                    t_of.push(1);
                    continue;
                }
                // split as evenly as possible, remainder to the left
                let children = t.min(r);
                let base = t / children;
                let rem = t % children;
                for c in 0..children {
                    parent_of.push(parent as u32);
                    t_of.push(base + u32::from(c < rem));
                }
            }
            current = t_of.clone();
            levels.push(PlanLevel { parent_of, t_of });
        }
        let plan = Self { k, r, levels };
        debug_assert_eq!(plan.num_levels(), ceil_log(k, r));
        debug_assert_eq!(plan.levels.last().unwrap().bucket_count(), k);
        Ok(plan)
    }

    pub fn num_levels(&self) -> u32 {
        self.levels.len() as u32
    }

    /// Child index ranges per parent for level `level` (1-based).
    fn child_ranges(&self, level: u32) -> Vec<(u32, u32)> {
        let lv = &self.levels[level as usize - 1];
        let parents = if level == 1 {
            1
        } else {
            self.levels[level as usize - 2].bucket_count()
        };
        let mut ranges = vec![(0u32, 0u32); parents as usize];
        let mut start = 0u32;
        for p in 0..parents {
            let mut end = start;
            while (end as usize) < lv.parent_of.len() && lv.parent_of[end as usize] == p {
                end += 1;
            }
            ranges[p as usize] = (start, end);
            start = end;
        }
        ranges
    }

    /// final bucket -> ancestor bucket at `level` (1-based).
    pub fn ancestors_at(&self, level: u32) -> Vec<u32> {
        let last = self.num_levels();
        let mut anc: Vec<u32> = (0..self.k).collect();
        let mut lv = last;
        while lv > level {
            let parent = &self.levels[lv as usize - 1].parent_of;
            for a in anc.iter_mut() {
                *a = parent[*a as usize];
            }
            lv -= 1;
        }
        anc
    }

    /// Effective per-bucket capacities per level. A bucket that will
    /// become `t` final buckets may hold `(1+ε_level)·t·n/k` vertices, but
    /// never more than its children can accept at the next level — the
    /// bottom-up minimum keeps every split feasible.
    pub fn effective_capacities(&self, n: usize, epsilon: f64) -> Result<Vec<Vec<u64>>, GraphError> {
        let total = self.num_levels();
        let mut caps: Vec<Vec<u64>> = Vec::with_capacity(total as usize);
        let nominal = |level: u32, t: u32| -> u64 {
            let eps = epsilon_schedule(level, total, epsilon);
            // nonnegative, cast truncation is the floor
            ((1.0 + eps) * f64::from(t) * n as f64 / f64::from(self.k)) as u64
        };
        for level in 1..=total {
            caps.push(
                self.levels[level as usize - 1]
                    .t_of
                    .iter()
                    .map(|&t| nominal(level, t))
                    .collect(),
            );
        }
        for level in (1..total).rev() {
            let ranges = self.child_ranges(level + 1);
            let (head, tail) = caps.split_at_mut(level as usize);
            let here = &mut head[level as usize - 1];
            let below = &tail[0];
            for (b, cap) in here.iter_mut().enumerate() {
                let (s, e) = ranges[b];
                let child_sum: u64 = below[s as usize..e as usize].iter().sum();
                *cap = (*cap).min(child_sum);
            }
        }
        let level1: u64 = caps[0].iter().sum();
        if level1 < n as u64 {
            return Err(GraphError::InfeasibleBalance { capacity: level1, n });
        }
        Ok(caps)
    }
}

fn ceil_log(k: u32, r: u32) -> u32 {
    let mut levels = 0;
    let mut reach = 1u64;
    while reach < u64::from(k) {
        reach *= u64::from(r);
        levels += 1;
    }
    levels
}

/// Direct k-way partitioning: random initialization followed by the
/// refinement loop over all `k` buckets at once.
pub fn direct_partition<E: Executor, C: Clock>(
    g: &BipartiteGraph,
    k: u32,
    params: &RefineParams,
    exec: &E,
    clock: &C,
) -> Result<(PartitionState, Trace), GraphError> {
    let mut state = crate::graph::init_random_partition(g, k, params.seed)?;
    let trace = refine_loop(g, &mut state, params, exec, clock)?;
    Ok((state, trace))
}

/// Direct mode started from an explicit assignment (incremental updates).
pub fn direct_partition_from<E: Executor, C: Clock>(
    g: &BipartiteGraph,
    initial: Vec<u32>,
    k: u32,
    params: &RefineParams,
    exec: &E,
    clock: &C,
) -> Result<(PartitionState, Trace), GraphError> {
    if initial.len() != g.num_data() {
        return Err(GraphError::IncompleteAssignment { got: initial.len(), expected: g.num_data() });
    }
    let mut state = PartitionState::from_assignment(initial, k)?;
    let trace = refine_loop(g, &mut state, params, exec, clock)?;
    Ok((state, trace))
}

/// Recursive r-ary partitioning. `initial` optionally seeds every level by
/// projecting a final-bucket assignment onto its ancestors (incremental
/// mode); otherwise each level re-randomizes vertices over their bucket's
/// children, weighted by the children's remaining split factors.
pub fn recursive_partition<E: Executor, C: Clock>(
    g: &BipartiteGraph,
    k: u32,
    r: u32,
    params: &RefineParams,
    initial: Option<&[u32]>,
    exec: &E,
    clock: &C,
) -> Result<(PartitionState, Trace), GraphError> {
    if !params.score.is_valid() {
        return Err(GraphError::InvalidScore);
    }
    if k as usize > g.num_data() {
        return Err(GraphError::TooManyBuckets { k, n: g.num_data() });
    }
    if let Some(init) = initial {
        if init.len() != g.num_data() {
            return Err(GraphError::IncompleteAssignment {
                got: init.len(),
                expected: g.num_data(),
            });
        }
        if let Some(&b) = init.iter().find(|&&b| b >= k) {
            return Err(GraphError::BucketOutOfRange { bucket: b, k });
        }
    }
    let plan = RecursionPlan::new(k, r)?;
    let caps = plan.effective_capacities(g.num_data(), params.epsilon)?;
    let p = params.score.p().unwrap_or(1.0);
    let total = plan.num_levels();
    let mut trace = Trace::default();
    let mut assignment: Vec<u32> = Vec::new();

    for level in 1..=total {
        let lv = &plan.levels[level as usize - 1];
        assignment = match initial {
            Some(init) => {
                let anc = plan.ancestors_at(level);
                init.iter().map(|&b| anc[b as usize]).collect()
            }
            None => spread_to_children(&plan, level, &assignment, params.seed, g.num_data()),
        };
        let mut state = PartitionState::from_assignment(assignment, lv.bucket_count())?;
        state.set_allowed(AllowedTargets::Grouped(BucketGroups::new(lv.parent_of.clone())));

        let scores: Vec<ScoreFunction> = lv
            .t_of
            .iter()
            .map(|&t| {
                if t > 1 {
                    ScoreFunction::RecursiveApprox { p, t }
                } else {
                    ScoreFunction::PFanout { p }
                }
            })
            .collect();
        let setup = LevelSetup {
            level,
            epsilon_cur: epsilon_schedule(level, total, params.epsilon),
            capacities: caps[level as usize - 1].clone(),
            scores: ScoreSet::per_bucket(&scores, g.max_query_degree()),
        };
        run_level(g, &mut state, params, setup, exec, clock, &mut trace);
        assignment = state.assignment().to_vec();
    }

    let state = PartitionState::from_assignment(assignment, k)?;
    Ok((state, trace))
}

/// Level-transition assignment: every vertex lands on a child of its
/// current bucket, chosen with probability proportional to the child's
/// remaining split factor (level 1 descends from the virtual root).
///
/// Level 1 with equal weights draws exactly like
/// [`crate::graph::init_random_partition`], so a single-level recursion
/// (`k == r`) reproduces direct mode bit for bit.
fn spread_to_children(
    plan: &RecursionPlan,
    level: u32,
    current: &[u32],
    seed: u64,
    n: usize,
) -> Vec<u32> {
    let lv = &plan.levels[level as usize - 1];
    let ranges = plan.child_ranges(level);
    let mut rng = if level == 1 {
        ChaCha8Rng::seed_from_u64(seed)
    } else {
        ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (u64::from(level) << 32)))
    };
    (0..n)
        .map(|v| {
            let parent = if level == 1 { 0 } else { current[v] };
            let (s, e) = ranges[parent as usize];
            let span = e - s;
            if span == 1 {
                return s;
            }
            let weight_total: u32 = lv.t_of[s as usize..e as usize].iter().sum();
            if weight_total == span * lv.t_of[s as usize] {
                // children split evenly (t values differ by at most one,
                // larger ones first, so equal totals mean equal weights)
                return s + rng.random_range(0..span);
            }
            let mut draw = rng.random_range(0..weight_total);
            let mut child = s;
            while draw >= lv.t_of[child as usize] {
                draw -= lv.t_of[child as usize];
                child += 1;
            }
            child
        })
        .collect()
}
