//! Deterministic seed derivation.
//!
//! Every stochastic stage derives its own stream from the user-facing seed so
//! that per-case, per-epoch, and per-point draws are independent of call
//! order. Derivation uses the splitmix64 finalizer, which is stable across
//! platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag into an independent sub-seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag))
}

/// Mixes a base seed with a string identity and an index; used for per-point
/// inference seeds that must not depend on call order.
pub fn derive_seed_str(base: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name bytes, then splitmix with the index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(base, splitmix64(h) ^ index)
}

/// Seeded ChaCha8 stream; the one RNG used throughout the pipeline.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        assert_ne!(derive_seed(42, 7), derive_seed(42, 8));
        assert_ne!(derive_seed(42, 7), derive_seed(43, 7));
    }

    #[test]
    fn string_derivation_distinguishes_cases_and_indices() {
        let a = derive_seed_str(42, "case_000", 3);
        assert_eq!(a, derive_seed_str(42, "case_000", 3));
        assert_ne!(a, derive_seed_str(42, "case_001", 3));
        assert_ne!(a, derive_seed_str(42, "case_000", 4));
    }

    #[test]
    fn rng_stream_is_reproducible() {
        let mut a = rng_from_seed(123);
        let mut b = rng_from_seed(123);
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
