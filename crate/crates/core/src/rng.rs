//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the experiment seed, so adding a consumer does not shift the draws seen
//! by the others.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Independent stream identifiers used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    TrainFeed = 2,
    Clicks = 3,
    Algorithm = 4,
    Valid = 5,
    Test = 6,
    Propensity = 7,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream for one training step of one component. Deriving per-step
/// streams lets a resumed run reproduce the draws of an uninterrupted one.
pub fn step_stream(seed: u64, which: Stream, step: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream((step << 4) | which as u64);
    rng
}
