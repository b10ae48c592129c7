//! Small deterministic hashing helpers used for per-vertex decisions.
//!
//! These replace a sequential RNG anywhere a decision must be a pure
//! function of (seed, vertex), so that results do not depend on iteration
//! order or worker count.

/// splitmix64 finalizer. Good avalanche, stable forever.
#[inline]
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash of a (seed, vertex) pair; ranks vertices inside histogram bins.
#[inline]
pub(crate) fn vertex_rank(seed: u64, vertex: u32) -> u64 {
    splitmix64(seed ^ splitmix64(u64::from(vertex)))
}

/// Hash of (seed, iteration, vertex) mapped to [0, 1); the probabilistic
/// move coin.
#[inline]
pub(crate) fn move_coin(seed: u64, iteration: u32, vertex: u32) -> f64 {
    let h = splitmix64(seed ^ splitmix64(u64::from(iteration) << 32 | u64::from(vertex)));
    // 53 high bits -> uniform double in [0, 1)
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coin_is_in_unit_interval() {
        for v in 0..1000 {
            let c = move_coin(7, 3, v);
            assert!((0.0..1.0).contains(&c));
        }
    }

    #[test]
    fn rank_differs_by_seed() {
        assert_ne!(vertex_rank(1, 42), vertex_rank(2, 42));
    }
}
