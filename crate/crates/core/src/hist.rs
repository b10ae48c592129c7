//! Exponential gain histograms and balanced bin matching.
//!
//! For every directed bucket pair the master keeps a histogram of the
//! proposing vertices' move gains in exponentially sized bins. Matching
//! the two histograms of a pair from the highest bins downward recovers
//! the best swaps first without the master ever materializing per-vertex
//! gain queues; a positive and a negative bin may still be matched when
//! the expected gain sum of a swapped pair stays positive.
//!
//! Bin layout: signed index `s ∈ [−64, 64]`. Bin 0 holds |gain| < `u`
//! (the unit gain, 1e-9); bin `s > 0` holds gains in `[2^(s−1)·u, 2^s·u)`
//! and `s < 0` mirrors it for negative gains. The extreme bins absorb
//! anything beyond `2^63·u ≈ 9.2`, so 129 bins cover every gain the
//! objective can produce. A bin's representative gain is the midpoint of
//! its interval, sign included.

/// Unit gain: the resolution floor of the histograms.
pub const UNIT_GAIN: f64 = 1e-9;

/// Largest bin magnitude; indices are clamped into `[-BIN_RANGE, BIN_RANGE]`.
pub const BIN_RANGE: i32 = 64;

/// Total number of bins per directed bucket pair.
pub const NUM_BINS: usize = (2 * BIN_RANGE + 1) as usize;

/// Exact power of two; `k` must stay in the normal f64 exponent range.
#[inline]
fn exp2i(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((1023 + k) as u64) << 52)
}

/// Floor of log2 for a finite positive normal value.
#[inline]
fn floor_log2(x: f64) -> i32 {
    (((x.to_bits() >> 52) & 0x7ff) as i32) - 1023
}

/// Signed bin index for a move gain.
#[inline]
pub fn gain_bin(gain: f64) -> i8 {
    let magnitude = (if gain < 0.0 { -gain } else { gain }) / UNIT_GAIN;
    if magnitude < 1.0 {
        return 0;
    }
    let e = floor_log2(magnitude).min(BIN_RANGE - 1);
    let s = e + 1;
    if gain < 0.0 {
        -s as i8
    } else {
        s as i8
    }
}

/// Representative (midpoint) gain of a bin, sign-correct.
#[inline]
pub fn bin_rep(bin: i8) -> f64 {
    if bin == 0 {
        return 0.0;
    }
    let mid = 0.75 * exp2i(i32::from(bin.unsigned_abs())) * UNIT_GAIN;
    if bin < 0 {
        -mid
    } else {
        mid
    }
}

#[inline]
fn slot(bin: i8) -> usize {
    (i32::from(bin) + BIN_RANGE) as usize
}

#[inline]
fn bin_of_slot(idx: usize) -> i8 {
    (idx as i32 - BIN_RANGE) as i8
}

/// Vertex counts per gain bin for one directed bucket pair.
#[derive(Clone)]
pub struct GainHistogram {
    bins: [u32; NUM_BINS],
}

impl Default for GainHistogram {
    fn default() -> Self {
        Self { bins: [0; NUM_BINS] }
    }
}

impl GainHistogram {
    pub fn add(&mut self, bin: i8) {
        self.bins[slot(bin)] += 1;
    }

    pub fn count(&self, bin: i8) -> u32 {
        self.bins[slot(bin)]
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|&c| u64::from(c)).sum()
    }

    /// `(bin, count)` pairs with nonzero count, best gains first.
    pub fn descending(&self) -> impl Iterator<Item = (i8, u32)> + '_ {
        self.bins
            .iter()
            .enumerate()
            .rev()
            .filter(|&(_, &c)| c > 0)
            .map(|(i, &c)| (bin_of_slot(i), c))
    }
}

impl core::fmt::Debug for GainHistogram {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_map()
            .entries(self.descending().map(|(b, c)| (b, c)))
            .finish()
    }
}

/// Move quota for one `(directed pair, bin)` cell, plus the equivalent
/// fraction of the bin's population for probabilistic application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveDirective {
    pub from: u32,
    pub to: u32,
    pub bin: i8,
    pub quota: u32,
    pub fraction: f64,
}

/// Outcome of matching the two histograms of an unordered bucket pair.
#[derive(Debug, Clone)]
pub struct PairMatch {
    /// Per-bin quotas for the `a` direction (i→j), indexed by bin slot.
    pub a_quota: [u32; NUM_BINS],
    /// Per-bin quotas for the `b` direction (j→i).
    pub b_quota: [u32; NUM_BINS],
    /// Pairs swapped (equal flow both ways).
    pub matched: u64,
    /// Unmatched positive-gain movers granted out of balance slack, i→j.
    pub extra_a: u64,
    /// Same for j→i.
    pub extra_b: u64,
}

impl Default for PairMatch {
    fn default() -> Self {
        Self {
            a_quota: [0; NUM_BINS],
            b_quota: [0; NUM_BINS],
            matched: 0,
            extra_a: 0,
            extra_b: 0,
        }
    }
}

impl PairMatch {
    pub fn quota(&self, direction_a: bool, bin: i8) -> u32 {
        if direction_a {
            self.a_quota[slot(bin)]
        } else {
            self.b_quota[slot(bin)]
        }
    }
}

/// Matches the histograms of directions i→j (`a`) and j→i (`b`).
///
/// Greedy two-pointer from the highest-gain bins downward: a bin pair is
/// matchable while the sum of the two representatives is strictly
/// positive, so equal numbers of vertices flow each way and the expected
/// objective change of every matched pair is an improvement. Afterwards up
/// to `slack_a` leftover strictly-positive-gain vertices may move i→j
/// unmatched (and `slack_b` respectively j→i), consuming the target's
/// remaining capacity.
pub fn match_histograms(
    a: &GainHistogram,
    b: &GainHistogram,
    slack_a: u64,
    slack_b: u64,
) -> PairMatch {
    let mut out = PairMatch::default();

    let mut ia = NUM_BINS;
    let mut ib = NUM_BINS;
    let mut rem_a = 0u32;
    let mut rem_b = 0u32;
    // advance to the next nonempty bin below `i`, returning its slot
    let next = |bins: &[u32; NUM_BINS], mut i: usize| -> Option<(usize, u32)> {
        while i > 0 {
            i -= 1;
            if bins[i] > 0 {
                return Some((i, bins[i]));
            }
        }
        None
    };

    loop {
        if rem_a == 0 {
            match next(&a.bins, ia) {
                Some((i, c)) => {
                    ia = i;
                    rem_a = c;
                }
                None => break,
            }
        }
        if rem_b == 0 {
            match next(&b.bins, ib) {
                Some((i, c)) => {
                    ib = i;
                    rem_b = c;
                }
                None => break,
            }
        }
        if bin_rep(bin_of_slot(ia)) + bin_rep(bin_of_slot(ib)) <= 0.0 {
            // representatives only fall from here on
            break;
        }
        let m = rem_a.min(rem_b);
        out.a_quota[ia] += m;
        out.b_quota[ib] += m;
        out.matched += u64::from(m);
        rem_a -= m;
        rem_b -= m;
    }

    // Slack extras: strictly positive bins only, best first.
    let grant = |bins: &[u32; NUM_BINS], quota: &mut [u32; NUM_BINS], mut slack: u64| -> u64 {
        let mut granted = 0u64;
        for i in (0..NUM_BINS).rev() {
            if bin_of_slot(i) <= 0 || slack == 0 {
                break;
            }
            let rem = u64::from(bins[i] - quota[i]);
            let m = rem.min(slack);
            quota[i] += m as u32;
            slack -= m;
            granted += m;
        }
        granted
    };
    out.extra_a = grant(&a.bins, &mut out.a_quota, slack_a);
    out.extra_b = grant(&b.bins, &mut out.b_quota, slack_b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_boundaries() {
        assert_eq!(gain_bin(0.0), 0);
        assert_eq!(gain_bin(0.9e-9), 0);
        assert_eq!(gain_bin(-0.9e-9), 0);
        assert_eq!(gain_bin(1e-9), 1);
        assert_eq!(gain_bin(1.9e-9), 1);
        assert_eq!(gain_bin(2e-9), 2);
        assert_eq!(gain_bin(-2e-9), -2);
        assert_eq!(gain_bin(1.0), 30); // 1/1e-9 = 1e9, floor log2 = 29
        assert_eq!(gain_bin(f64::MAX), 64);
        assert_eq!(gain_bin(-f64::MAX), -64);
    }

    #[test]
    fn reps_are_midpoints_and_monotone() {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs();
        assert_eq!(bin_rep(0), 0.0);
        assert!(close(bin_rep(1), 1.5e-9));
        assert!(close(bin_rep(2), 3e-9));
        assert!(close(bin_rep(-1), -1.5e-9));
        for s in -63i8..64 {
            assert!(bin_rep(s) < bin_rep(s + 1));
        }
        // the representative sits inside the bin's interval
        for g in [1.3e-9, 5e-9, 0.25, 3.7, -0.001] {
            let s = gain_bin(g);
            let rep = bin_rep(s);
            assert_eq!(gain_bin(rep), s, "rep of bin {s} left its own bin");
        }
    }

    fn hist_of(gains: &[(f64, u32)]) -> GainHistogram {
        let mut h = GainHistogram::default();
        for &(g, n) in gains {
            for _ in 0..n {
                h.add(gain_bin(g));
            }
        }
        h
    }

    #[test]
    fn matches_min_flow_per_direction() {
        // 10 positive one way, 4 the other, no slack: 4 swaps each way
        let a = hist_of(&[(0.3, 10)]);
        let b = hist_of(&[(0.2, 4)]);
        let m = match_histograms(&a, &b, 0, 0);
        assert_eq!(m.matched, 4);
        assert_eq!(m.quota(true, gain_bin(0.3)), 4);
        assert_eq!(m.quota(false, gain_bin(0.2)), 4);
        assert_eq!(m.extra_a + m.extra_b, 0);
    }

    #[test]
    fn pairs_positive_with_negative() {
        let a = hist_of(&[(0.4, 5)]);
        let b = hist_of(&[(-0.1, 5)]);
        let m = match_histograms(&a, &b, 0, 0);
        assert_eq!(m.matched, 5);
        // the reverse pairing is not matchable
        let m = match_histograms(&b, &a, 0, 0);
        assert_eq!(m.matched, 5);
    }

    #[test]
    fn refuses_negative_sums() {
        let a = hist_of(&[(-0.4, 5)]);
        let b = hist_of(&[(0.1, 5)]);
        let m = match_histograms(&a, &b, 0, 0);
        assert_eq!(m.matched, 0);
        let m = match_histograms(&hist_of(&[]), &hist_of(&[]), 5, 5);
        assert_eq!(m.matched + m.extra_a + m.extra_b, 0);
    }

    #[test]
    fn consumes_best_bins_first() {
        let a = hist_of(&[(0.5, 2), (0.05, 6)]);
        let b = hist_of(&[(0.3, 3)]);
        let m = match_histograms(&a, &b, 0, 0);
        assert_eq!(m.matched, 3);
        assert_eq!(m.quota(true, gain_bin(0.5)), 2);
        assert_eq!(m.quota(true, gain_bin(0.05)), 1);
    }

    #[test]
    fn slack_grants_positive_leftovers_only() {
        let a = hist_of(&[(0.5, 4), (-0.2, 3)]);
        let b = hist_of(&[]);
        let m = match_histograms(&a, &b, 10, 10);
        assert_eq!(m.matched, 0);
        assert_eq!(m.extra_a, 4); // the negative bin never moves unmatched
        assert_eq!(m.extra_b, 0);
        let m = match_histograms(&a, &b, 2, 0);
        assert_eq!(m.extra_a, 2);
    }

    #[test]
    fn zero_bin_can_ride_a_positive_partner() {
        let a = hist_of(&[(0.0, 3)]);
        let b = hist_of(&[(0.2, 3)]);
        let m = match_histograms(&a, &b, 0, 0);
        assert_eq!(m.matched, 3);
        // but two zero bins cannot
        let m = match_histograms(&hist_of(&[(0.0, 3)]), &hist_of(&[(0.0, 3)]), 0, 0);
        assert_eq!(m.matched, 0);
    }
}
