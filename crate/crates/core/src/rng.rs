//! Deterministic random streams.
//!
//! Every stochastic component takes an explicit seed and derives its stream
//! through [`sub_seed`], so distinct pipeline stages (graph growth, per-block
//! microbubble seeding, weight init, epoch shuffling) never share state and
//! reruns are bit-identical regardless of thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide RNG. ChaCha keeps the streams portable across platforms.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent seed from a parent seed and a stream label
/// (splitmix64 finalizer; avalanches every input bit).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
