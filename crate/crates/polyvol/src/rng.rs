//! Deterministic stream derivation.
//!
//! Every random draw in the estimator comes from a ChaCha8 stream addressed
//! by `(seed, repeat, phase, kind)`. Streams are independent by construction,
//! so repeats can run in parallel and any stage can be replayed in isolation.
//! States clone cheaply, which is what makes checkpoint/rollback exact.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stage of the estimator a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    /// Starting-scale search and its rejection sampling.
    Sigma0 = 1,
    /// Rate tuning pilots (one continuous stream per repeat).
    Tuning = 2,
    /// Production sampling; `phase` selects the ladder rung.
    Production = 3,
}

/// Derives the stream for one stage of one repeat.
///
/// `repeat` must fit in 24 bits and `phase` in 32; both are far beyond any
/// realistic schedule.
pub fn stream(seed: u64, kind: StreamKind, repeat: u64, phase: u64) -> Stream {
    assert!(repeat < (1 << 24), "repeat index out of range");
    assert!(phase < (1 << 32), "phase index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) | (repeat << 32) | phase);
    rng
}
