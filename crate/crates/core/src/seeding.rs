//! Deterministic seed derivation for per-item RNG streams.
//!
//! Generators that loop over items must not share one RNG stream, or item k's
//! output would depend on how much randomness items 0..k consumed. Each item
//! gets its own stream derived by stable mixing of (run seed, item index).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable per-item seed from a run seed and an item index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// RNG for a derived stream. ChaCha so streams are identical across platforms.
pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// RNG seeded directly from a u64.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 0), derive_seed(7, 0));
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn streams_do_not_depend_on_consumption_order() {
        let a: u64 = rng_for(42, 3).gen();
        let mut other = rng_for(42, 2);
        let _burn: [u64; 5] = other.gen();
        let b: u64 = rng_for(42, 3).gen();
        assert_eq!(a, b);
    }
}
