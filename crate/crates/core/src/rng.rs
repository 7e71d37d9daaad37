//! Seeded, splittable random streams.
//!
//! Every consumer gets its own ChaCha8 stream keyed by `(seed, purpose,
//! index)`, so row `i` of a dataset sees the same draws no matter how work
//! is partitioned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purposes partition the stream space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sampler = 1,
    Mocap = 2,
    Init = 3,
    Shuffle = 4,
    Trial = 5,
    Split = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((purpose as u64) << 56) ^ index);
    r
}
