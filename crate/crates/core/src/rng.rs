//! Seeded random streams. Every chain, oracle and dataset draws from its own
//! ChaCha stream identified by `(seed, index, purpose)`, so results never
//! depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; keeps chain noise and mini-batch draws apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ChainNoise = 1,
    MiniBatch = 2,
    Initialization = 3,
    Data = 4,
    Reference = 5,
    Projections = 6,
}

pub fn stream(seed: u64, index: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | purpose as u64);
    rng
}
