//! Seeded, splittable random streams.
//!
//! Every stochastic component (masks, phantoms, weights, shuffles) draws from
//! its own stream keyed by `(seed, purpose-tag, index)`, so changing one
//! consumer never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, 64 bit. Stable across platforms and toolchain versions, unlike
/// `std::hash::DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for the stream `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(tag.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&(seed ^ 0x9e3779b97f4a7c15).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
