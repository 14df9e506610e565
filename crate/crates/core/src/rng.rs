//! Seed derivation and the generator used for every random draw in the crate.
//!
//! All randomness flows through [`ChaCha8Rng`] seeded by [`rng_from_seed`].
//! Child seeds (per ordering, per replication, per row) are produced with
//! [`derive_seed`], a SplitMix64 finalizer applied to the parent seed mixed
//! with a stream index. The scheme is splittable: the seed for stream `i`
//! depends only on `(parent, i)`, so work can be distributed across threads
//! in any order without changing the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `stream` under `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.wrapping_mul(GOLDEN_GAMMA).rotate_left(17))
}

/// Seed of child stream `(a, b)` under `parent`.
pub fn derive_seed2(parent: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(parent, a), b)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
