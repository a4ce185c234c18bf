//! Deterministic, splittable random streams.
//!
//! Every consumer of randomness (init, shuffling, Gumbel draws, scene
//! generation, feature noise) derives its own ChaCha stream from the
//! config seed plus a stream tag, so runs are reproducible and streams
//! never interfere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags (first element of the `parts` key).
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const GUMBEL: u64 = 3;
    pub const SCENE: u64 = 4;
    pub const FEATURES: u64 = 5;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A ChaCha stream keyed by `(seed, parts...)`.
pub fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    ChaCha8Rng::seed_from_u64(state)
}
