//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from its own ChaCha8 stream
//! whose seed is derived from a master seed, a purpose tag, and an index.
//! This keeps independent stages (weight init, per-epoch shuffles, per-sample
//! scene generation, axis sampling) decoupled: inserting a draw in one stage
//! never shifts another stage's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a bijective mix with good avalanche behaviour.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from `(master, tag, index)`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    mix(mix(master ^ fnv1a(tag)) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// ChaCha8 stream for `(master, tag, index)`.
pub fn rng_for(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}
