//! Deterministic random sampling on top of ChaCha8.
//!
//! All stochastic parts of the pipeline (scene synthesis, weight
//! initialization) draw through these helpers so that a seed fully
//! determines the result, independent of external crate defaults.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::{fr, Scalar};

/// Creates the stream RNG for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed, e.g. one per scene in a dataset.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over (seed, index).
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)`.
pub fn uniform01<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    // 53 high bits -> exact dyadic rational in [0, 1).
    let u = rng.next_u64() >> 11;
    fr((u as f64) * (1.0 / (1u64 << 53) as f64))
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, lo: T, hi: T) -> T {
    lo + uniform01::<T>(rng) * (hi - lo)
}

/// Standard normal draw via Box-Muller.
pub fn normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    loop {
        let u1: f64 = ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64);
        let u2: f64 = ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64);
        if u1 > 0.0 {
            let r = (-2.0 * u1.ln()).sqrt();
            return fr(r * (2.0 * std::f64::consts::PI * u2).cos());
        }
    }
}
