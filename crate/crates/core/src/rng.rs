//! Seed derivation and random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! 64-bit seed. Per-trial seeds are mixed from their coordinates with
//! SplitMix64 so that trials never share state and can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a tuple of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_0FC0_FFEE_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// FNV-1a, used to fold labels (rule ids, preset names) into seeds.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_order_sensitive() {
        assert_eq!(derive_seed(&[1, 2, 3]), derive_seed(&[1, 2, 3]));
        assert_ne!(derive_seed(&[1, 2, 3]), derive_seed(&[3, 2, 1]));
        assert_ne!(derive_seed(&[0]), derive_seed(&[0, 0]));
        assert_ne!(label_hash("lp"), label_hash("plugin"));
    }

    #[test]
    fn streams_replay() {
        let a: Vec<u32> = (0..8).map(|_| 0).scan(stream(9), |r, _: u32| Some(r.random())).collect();
        let b: Vec<u32> = (0..8).map(|_| 0).scan(stream(9), |r, _: u32| Some(r.random())).collect();
        assert_eq!(a, b);
    }
}
