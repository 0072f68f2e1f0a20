//! Seeded random streams. Every stochastic stage draws from its own stream so
//! that changing one stage never perturbs another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Validation = 2,
    Negatives = 3,
    Ripple = 4,
    Init = 5,
    Shuffle = 6,
    Eval = 7,
    History = 8,
    Synthetic = 9,
}

/// RNG for `stream`, further keyed by `sub` (an item id, an epoch, ...).
pub fn stream_rng(seed: u64, stream: Stream, sub: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(sub);
    rng
}
