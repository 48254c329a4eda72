//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the master seed and selected
//! by a 64-bit stream id, so the draws for trial `t` depend only on
//! `(seed, t, lane)` and never on how many other trials ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

/// Independent sub-streams available to each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    /// Noise added to workload answers.
    Measure = 0,
    /// Noise drawn by mechanisms that do not consume the shared measurements.
    Mechanism = 1,
}

const LANES: u64 = 4;

pub fn stream(seed: u64, trial: u64, lane: Lane) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(LANES).wrapping_add(lane as u64));
    rng
}
