//! Seeded random streams.
//!
//! All randomness flows through ChaCha8, a counter-based generator with
//! identical output on every platform. Distinct purposes (weight init, data
//! generation, shuffles, probe points) get distinct streams derived from the
//! same user seed, so adding draws to one purpose never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns the ChaCha8 stream for `(seed, purpose)`. The purpose tag is
/// FNV-1a hashed into the stream id, keeping streams independent.
pub fn stream(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(purpose.as_bytes()));
    rng
}

/// Deterministically derives a child seed from `(seed, tag)`, for fanning
/// one user seed out to independent sub-experiments.
pub fn derive(seed: u64, tag: &str) -> u64 {
    let mut h = fnv1a(tag.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // splitmix64 finalizer
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    h
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
