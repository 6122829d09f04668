//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha stream identified by
//! `(seed, stream)`, so any trajectory can be regenerated from its seed and
//! stream id alone, independent of how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a (purpose, index, sub-index) triple.
pub fn stream_id(purpose: u16, major: u32, minor: u32) -> u64 {
    ((purpose as u64) << 48) ^ ((major as u64) << 20) ^ (minor as u64)
}

pub fn standard_normal(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub mod purpose {
    pub const INIT: u16 = 1;
    pub const ROLLOUT: u16 = 2;
    pub const HOLDOUT: u16 = 3;
    pub const FIT: u16 = 4;
    pub const EVAL: u16 = 5;
    pub const VARIANCE: u16 = 6;
    pub const CHECK: u16 = 7;
}
