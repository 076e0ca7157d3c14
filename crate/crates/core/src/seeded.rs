//! Counter-keyed deterministic random streams.
//!
//! Every stochastic quantity in this crate is drawn from a generator keyed
//! on (seed, coordinate, coordinate). The draw for a given key is the same
//! regardless of evaluation order or thread count, which makes noisy
//! pipelines reproducible under any parallel schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer; full-avalanche 64-bit mixer.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses (seed, a, b) into a single well-mixed 64-bit key.
pub fn key(seed: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ b)
}

/// A fresh generator at counter position (a, b) of the stream `seed`.
pub fn rng_at(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, a, b))
}

/// One standard normal variate at counter position (a, b).
pub fn normal_at(seed: u64, a: u64, b: u64) -> f64 {
    let mut rng = rng_at(seed, a, b);
    StandardNormal.sample(&mut rng)
}

/// One variate uniform on (-half_width, half_width) at position (a, b).
pub fn uniform_sym_at(seed: u64, a: u64, b: u64, half_width: f64) -> f64 {
    // 53 mantissa bits of the key, mapped to [0, 1).
    let u = (key(seed, a, b) >> 11) as f64 / (1u64 << 53) as f64;
    (2.0 * u - 1.0) * half_width
}
