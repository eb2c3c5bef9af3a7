//! Seeded random streams.
//!
//! Every consumer gets a ChaCha8 generator keyed by `(seed, stream)`. Distinct
//! stream ids give independent sequences under the same seed, so replicate
//! `r` of a study always sees the same draws no matter which worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StudyRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for the different consumers inside one replicate.
pub mod streams {
    pub const DATA: u64 = 1 << 32;
    pub const FOLDS: u64 = 2 << 32;
    pub const ORACLE: u64 = 3 << 32;
}

/// Per-replicate seed for sub-consumers such as fold assignment.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream).next_u64()
}
