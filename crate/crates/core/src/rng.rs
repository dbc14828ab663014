//! Seeded ChaCha streams. Every random variable in a run draws from its own
//! stream, so adding draws to one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Named substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SplineInit = 1,
    SplineJitter = 2,
    CopulaFrailty = 10,
    CopulaFirst = 11,
    CopulaSecond = 12,
    IndependentAsset = 13,
}

/// Generator for `(seed, stream, replication)`.
pub fn stream(seed: u64, which: Stream, replication: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | (replication & 0xffff_ffff));
    rng
}
