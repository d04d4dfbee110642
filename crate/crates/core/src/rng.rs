//! Seeded random streams.
//!
//! One user-facing seed fans out into independent ChaCha streams, one per
//! purpose, so enabling dropout does not shift the perturbation masks and
//! vice versa.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Perturb = 2,
    Dropout = 3,
    Graph = 4,
    Features = 5,
    Split = 6,
    Noise = 7,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
