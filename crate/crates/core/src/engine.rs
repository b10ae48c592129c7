//! Deterministic in-process bulk-synchronous executor.
//!
//! One refinement iteration runs four supersteps with a barrier between
//! each, mirroring a distributed vertex-centric deployment:
//!
//! 1. data vertices announce bucket changes to their queries;
//! 2. queries share their per-bucket neighbor counts back, and data
//!    vertices compute move gains and pick targets;
//! 3. target proposals are aggregated into per-pair gain histograms at the
//!    coordinator;
//! 4. the coordinator broadcasts move directives and moves take effect.
//!
//! Messages are *logical* here — vertices share one address space — but
//! every message and payload entry that a cluster would send is counted,
//! so the communication bounds can be asserted by tests. Heavy phases run
//! on an [`Executor`] over fixed-size vertex chunks; the chunk
//! decomposition depends only on the input size, never on the worker
//! count, so results are bit-identical from 1 worker to many.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::graph::{AllowedTargets, BipartiteGraph, PartitionState};
use crate::hist::{gain_bin, GainHistogram};
use crate::mix::vertex_rank;
use crate::objective::{movement_penalty_charge, NeighborData, ScoreFunction, ScoreTable};

/// Fixed chunk size for data-parallel phases. Constant by design: chunk
/// boundaries (and therefore any per-chunk reduction order) must not
/// depend on the worker count.
const CHUNK: usize = 2048;

/// Runs closures over fixed index chunks and returns per-chunk results in
/// chunk order.
pub trait Executor: Sync {
    fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync;
}

fn chunk_range(i: usize, n: usize) -> Range<usize> {
    (i * CHUNK)..(((i + 1) * CHUNK).min(n))
}

fn num_chunks(n: usize) -> usize {
    n.div_ceil(CHUNK)
}

/// Runs every chunk on the calling thread. Available everywhere,
/// including `no_std` builds.
#[derive(Debug, Default, Clone, Copy)]
pub struct SerialExecutor;

impl Executor for SerialExecutor {
    fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        (0..num_chunks(n)).map(|i| f(chunk_range(i, n))).collect()
    }
}

/// Work-stealing pool over scoped threads. Chunks are claimed from a
/// shared counter; outputs are reassembled in chunk order, so any worker
/// count produces the same result.
#[cfg(feature = "std")]
#[derive(Debug, Clone, Copy)]
pub struct ThreadPool {
    workers: usize,
}

#[cfg(feature = "std")]
impl ThreadPool {
    pub fn new(workers: usize) -> Self {
        Self { workers: workers.max(1) }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

#[cfg(feature = "std")]
impl Executor for ThreadPool {
    fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        let chunks = num_chunks(n);
        if self.workers == 1 || chunks <= 1 {
            return SerialExecutor.map_chunks(n, f);
        }
        let next = core::sync::atomic::AtomicUsize::new(0);
        let f = &f;
        let next = &next;
        let mut slots: Vec<Option<T>> = Vec::with_capacity(chunks);
        slots.resize_with(chunks, || None);
        let parts: Vec<Vec<(usize, T)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..self.workers.min(chunks))
                .map(|_| {
                    scope.spawn(move || {
                        let mut local = Vec::new();
                        loop {
                            let i = next.fetch_add(1, core::sync::atomic::Ordering::Relaxed);
                            if i >= chunks {
                                break;
                            }
                            local.push((i, f(chunk_range(i, n))));
                        }
                        local
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for part in parts {
            for (i, value) in part {
                slots[i] = Some(value);
            }
        }
        slots.into_iter().map(|v| v.expect("chunk missing")).collect()
    }
}

/// Millisecond clock for iteration timing. Injected so the refinement
/// loop stays `no_std`-clean.
pub trait Clock {
    fn now_ms(&self) -> u64;
}

/// Always reports zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> u64 {
        0
    }
}

/// Wall clock measured from its construction.
#[cfg(feature = "std")]
#[derive(Debug)]
pub struct SystemClock {
    origin: std::time::Instant,
}

#[cfg(feature = "std")]
impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: std::time::Instant::now() }
    }
}

#[cfg(feature = "std")]
impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// The four phases of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Superstep {
    /// Data → query bucket announcements.
    Announce = 0,
    /// Query → data neighbor-data replies (the heavy phase).
    ShareNeighborData = 1,
    /// Data → coordinator target proposals.
    Propose = 2,
    /// Coordinator → data move directives.
    Direct = 3,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCounter {
    /// Logical messages sent in the phase.
    pub messages: u64,
    /// Total payload entries across those messages.
    pub payload: u64,
}

/// Per-iteration message accounting, one counter per superstep.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MessageCounters {
    phases: [PhaseCounter; 4],
}

impl MessageCounters {
    pub fn phase(&self, step: Superstep) -> PhaseCounter {
        self.phases[step as usize]
    }

    pub fn add(&mut self, step: Superstep, messages: u64, payload: u64) {
        let c = &mut self.phases[step as usize];
        c.messages += messages;
        c.payload += payload;
    }

    pub fn merge(&mut self, other: &MessageCounters) {
        for (mine, theirs) in self.phases.iter_mut().zip(other.phases.iter()) {
            mine.messages += theirs.messages;
            mine.payload += theirs.payload;
        }
    }
}

/// Queries and data vertices whose cached state must be recomputed after
/// the given vertices moved: exactly the queries adjacent to a moved
/// vertex, and the data vertices adjacent to those queries. Both lists
/// come back sorted.
pub fn lazy_recompute(g: &BipartiteGraph, moved: &[u32]) -> DirtySets {
    let mut query_flag = vec![false; g.num_queries()];
    for &v in moved {
        for &q in g.data_neighbors(v) {
            query_flag[q as usize] = true;
        }
    }
    let queries: Vec<u32> =
        (0..g.num_queries() as u32).filter(|&q| query_flag[q as usize]).collect();
    let mut data_flag = vec![false; g.num_data()];
    for &q in &queries {
        for &v in g.query_neighbors(q) {
            data_flag[v as usize] = true;
        }
    }
    let data: Vec<u32> = (0..g.num_data() as u32).filter(|&v| data_flag[v as usize]).collect();
    DirtySets { queries, data }
}

#[derive(Debug, Clone, Default)]
pub struct DirtySets {
    pub queries: Vec<u32>,
    pub data: Vec<u32>,
}

/// Score tables per bucket. Direct mode uses one table for every bucket;
/// recursive mode gives sibling buckets tables matching their remaining
/// split factors.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    tables: Vec<ScoreTable>,
    table_of: Vec<u32>,
}

impl ScoreSet {
    pub fn uniform(score: &ScoreFunction, max_degree: usize, k: u32) -> Self {
        Self {
            tables: vec![ScoreTable::build(score, max_degree)],
            table_of: vec![0; k as usize],
        }
    }

    /// One score per bucket; identical scores share a table.
    pub fn per_bucket(scores: &[ScoreFunction], max_degree: usize) -> Self {
        let mut tables: Vec<ScoreTable> = Vec::new();
        let mut built: Vec<ScoreFunction> = Vec::new();
        let mut table_of = Vec::with_capacity(scores.len());
        for score in scores {
            let idx = match built.iter().position(|s| s == score) {
                Some(i) => i,
                None => {
                    built.push(*score);
                    tables.push(ScoreTable::build(score, max_degree));
                    tables.len() - 1
                }
            };
            table_of.push(idx as u32);
        }
        Self { tables, table_of }
    }

    #[inline]
    pub fn table_for(&self, bucket: u32) -> &ScoreTable {
        &self.tables[self.table_of[bucket as usize] as usize]
    }
}

/// A data vertex's target proposal for the current iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub vertex: u32,
    pub from: u32,
    pub to: u32,
    pub gain: f64,
    pub bin: i8,
    /// Seeded hash ranking the vertex inside its bin for quota selection.
    pub rank: u64,
}

/// One directed bucket pair's contiguous run in the sorted proposal list,
/// with its gain histogram. Within the run, bins descend and vertices are
/// ordered by rank.
#[derive(Debug, Clone)]
pub struct PairRun {
    pub from: u32,
    pub to: u32,
    pub start: usize,
    pub end: usize,
    pub hist: GainHistogram,
}

/// Everything the coordinator needs after superstep 3.
#[derive(Debug)]
pub struct IterationOutput {
    pub proposals: Vec<Proposal>,
    pub pairs: Vec<PairRun>,
    pub counters: MessageCounters,
    pub dirty: DirtySets,
}

impl IterationOutput {
    pub fn pair(&self, from: u32, to: u32) -> Option<&PairRun> {
        self.pairs
            .binary_search_by_key(&(from, to), |r| (r.from, r.to))
            .ok()
            .map(|i| &self.pairs[i])
    }

    pub fn histogram(&self, from: u32, to: u32) -> GainHistogram {
        self.pair(from, to).map(|r| r.hist.clone()).unwrap_or_default()
    }
}

#[derive(Clone, Copy)]
struct Slot {
    to: u32,
    gain: f64,
    bin: i8,
}

/// Per-level engine session: owns the query neighbor data, the per-vertex
/// proposal cache, and the dirtiness bookkeeping between iterations.
pub struct Engine<'g> {
    g: &'g BipartiteGraph,
    scores: ScoreSet,
    penalty: f64,
    initial_bucket: Option<Vec<u32>>,
    seed: u64,
    neighbor: NeighborData,
    slots: Vec<Option<Slot>>,
    ranks: Vec<u64>,
    /// (vertex, old bucket) moves committed since the last iteration.
    pending_moves: Vec<(u32, u32)>,
    fresh: bool,
}

impl<'g> Engine<'g> {
    /// `initial_bucket` is the reference assignment for the movement
    /// penalty; pass `None` when `penalty` is zero.
    pub fn new(
        g: &'g BipartiteGraph,
        scores: ScoreSet,
        seed: u64,
        penalty: f64,
        initial_bucket: Option<Vec<u32>>,
    ) -> Self {
        let ranks = (0..g.num_data() as u32).map(|v| vertex_rank(seed, v)).collect();
        Self {
            g,
            scores,
            penalty,
            initial_bucket,
            seed,
            neighbor: NeighborData::empty(),
            slots: vec![None; g.num_data()],
            ranks,
            pending_moves: Vec::new(),
            fresh: true,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn neighbor_data(&self) -> &NeighborData {
        &self.neighbor
    }

    /// Registers moves applied to the partition state so the next
    /// iteration can update neighbor data and dirtiness incrementally.
    pub fn commit_moves(&mut self, moved: &[(u32, u32)]) {
        self.pending_moves.extend_from_slice(moved);
    }

    /// Supersteps 1–3: refresh neighbor data, recompute gains for dirty
    /// vertices, aggregate proposals into per-pair histograms.
    pub fn run_iteration<E: Executor>(
        &mut self,
        state: &PartitionState,
        exec: &E,
    ) -> IterationOutput {
        let g = self.g;
        let mut counters = MessageCounters::default();

        // Superstep 1: bucket announcements.
        let dirty;
        if self.fresh {
            self.fresh = false;
            let rows: Vec<Vec<Vec<(u32, u32)>>> = exec.map_chunks(g.num_queries(), |range| {
                range.map(|q| NeighborData::row_for(g, state, q as u32)).collect()
            });
            self.neighbor = NeighborData::from_rows(rows.into_iter().flatten().collect());
            counters.add(Superstep::Announce, g.num_edges() as u64, g.num_edges() as u64);
            dirty = DirtySets {
                queries: (0..g.num_queries() as u32).collect(),
                data: (0..g.num_data() as u32).collect(),
            };
        } else {
            let moved: Vec<u32> = self.pending_moves.iter().map(|&(v, _)| v).collect();
            let mut announced = 0u64;
            for &(v, old) in &self.pending_moves {
                let new = state.bucket_of(v);
                for &q in g.data_neighbors(v) {
                    self.neighbor.apply_move(q, old, new);
                }
                announced += g.data_degree(v) as u64;
            }
            counters.add(Superstep::Announce, announced, announced);
            dirty = lazy_recompute(g, &moved);
        }
        self.pending_moves.clear();

        // Superstep 2: neighbor-data replies. Payload counts only the
        // entries a recipient can act on (its own sibling group), which in
        // direct mode is the full row: fanout(q) entries to each of the
        // deg(q) recipients.
        let neighbor = &self.neighbor;
        let allowed = state.allowed();
        let phase2: Vec<(u64, u64)> = exec.map_chunks(dirty.queries.len(), |range| {
            let mut messages = 0u64;
            let mut payload = 0u64;
            for i in range {
                let q = dirty.queries[i];
                let row = neighbor.counts(q);
                messages += g.query_degree(q) as u64;
                match allowed {
                    AllowedTargets::All => {
                        payload += row.len() as u64 * g.query_degree(q) as u64;
                    }
                    AllowedTargets::Grouped(groups) => {
                        // run-lengths of the row per sibling group
                        for &v in g.query_neighbors(q) {
                            let gr = groups.group_of(state.bucket_of(v));
                            payload += row
                                .iter()
                                .filter(|&&(b, _)| groups.group_of(b) == gr)
                                .count() as u64;
                        }
                    }
                }
            }
            (messages, payload)
        });
        for (m, p) in phase2 {
            counters.add(Superstep::ShareNeighborData, m, p);
        }

        // Gains for dirty data vertices.
        let scores = &self.scores;
        let penalty = self.penalty;
        let initial = self.initial_bucket.as_deref();
        let k = state.k();
        let updates: Vec<Vec<(u32, Option<Slot>)>> =
            exec.map_chunks(dirty.data.len(), |range| {
                let mut acc = vec![0.0f64; k as usize];
                let mut touched: Vec<u32> = Vec::new();
                let mut out = Vec::with_capacity(range.len());
                for i in range {
                    let v = dirty.data[i];
                    out.push((v, propose(g, state, neighbor, scores, penalty, initial, v, &mut acc, &mut touched)));
                }
                out
            });
        for chunk in updates {
            for (v, slot) in chunk {
                self.slots[v as usize] = slot;
            }
        }

        // Superstep 3: proposals to the coordinator.
        let mut proposals: Vec<Proposal> = Vec::new();
        for v in 0..g.num_data() as u32 {
            if let Some(slot) = self.slots[v as usize] {
                proposals.push(Proposal {
                    vertex: v,
                    from: state.bucket_of(v),
                    to: slot.to,
                    gain: slot.gain,
                    bin: slot.bin,
                    rank: self.ranks[v as usize],
                });
            }
        }
        counters.add(Superstep::Propose, proposals.len() as u64, proposals.len() as u64);

        proposals.sort_unstable_by(|a, b| {
            (a.from, a.to, core::cmp::Reverse(a.bin), a.rank, a.vertex)
                .cmp(&(b.from, b.to, core::cmp::Reverse(b.bin), b.rank, b.vertex))
        });

        let mut pairs: Vec<PairRun> = Vec::new();
        let mut start = 0;
        for i in 0..proposals.len() {
            let last = i + 1 == proposals.len();
            let next_differs = !last
                && (proposals[i + 1].from, proposals[i + 1].to)
                    != (proposals[i].from, proposals[i].to);
            if last || next_differs {
                let mut hist = GainHistogram::default();
                for p in &proposals[start..=i] {
                    hist.add(p.bin);
                }
                pairs.push(PairRun {
                    from: proposals[start].from,
                    to: proposals[start].to,
                    start,
                    end: i + 1,
                    hist,
                });
                start = i + 1;
            }
        }

        IterationOutput { proposals, pairs, counters, dirty }
    }
}

/// Gain computation for one vertex against the iteration snapshot.
/// `acc`/`touched` are caller scratch (k-sized accumulator, cleared here).
///
/// The summation order mirrors `move_gain_tabled` exactly so the two
/// paths agree bit-for-bit.
#[allow(clippy::too_many_arguments)]
fn propose(
    g: &BipartiteGraph,
    state: &PartitionState,
    neighbor: &NeighborData,
    scores: &ScoreSet,
    penalty: f64,
    initial: Option<&[u32]>,
    v: u32,
    acc: &mut [f64],
    touched: &mut Vec<u32>,
) -> Option<Slot> {
    let from = state.bucket_of(v);
    let table_from = scores.table_for(from);
    let mut relief = 0.0f64;
    for &q in g.data_neighbors(v) {
        for &(b, c) in neighbor.counts(q) {
            if b == from {
                relief += table_from.removal_relief(c);
            } else if state.is_allowed(v, b) {
                if acc[b as usize] == 0.0 && !touched.contains(&b) {
                    touched.push(b);
                }
                let t = scores.table_for(b);
                acc[b as usize] += t.insertion_cost(c) + t.single();
            }
        }
    }

    let deg = g.data_degree(v) as f64;
    let mut best: Option<(f64, u32)> = None;
    let mut consider = |target: u32, acc_val: f64| {
        let t = scores.table_for(target);
        let mut cost = acc_val;
        cost -= deg * t.single();
        let charge = match initial {
            Some(init) => movement_penalty_charge(penalty, init[v as usize], from, target),
            None => 0.0,
        };
        let gain = (relief + cost) - charge;
        match best {
            Some((bg, bt)) if gain < bg || (gain == bg && target > bt) => {}
            _ => best = Some((gain, target)),
        }
    };
    match state.allowed() {
        AllowedTargets::All => {
            for target in 0..state.k() {
                if target != from {
                    consider(target, acc[target as usize]);
                }
            }
        }
        AllowedTargets::Grouped(groups) => {
            for &target in groups.members(groups.group_of(from)) {
                if target != from {
                    consider(target, acc[target as usize]);
                }
            }
        }
    }
    for &b in touched.iter() {
        acc[b as usize] = 0.0;
    }
    touched.clear();

    best.map(|(gain, to)| Slot { to, gain, bin: gain_bin(gain) })
}
