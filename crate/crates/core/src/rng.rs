//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by an
//! explicit `(seed, stream, index)` triple, so results never depend on the
//! order in which samples are visited or on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers, kept distinct so that streams never collide.
pub mod stream {
    pub const INIT: u64 = 0x1;
    pub const SHUFFLE: u64 = 0x2;
    pub const AUGMENT: u64 = 0x3;
    pub const SYNTHETIC: u64 = 0x4;
    pub const ADC_NOISE: u64 = 0x5;
    pub const LWC_INIT: u64 = 0x6;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with any number of 64-bit words.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(seed), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Generator for a single `(seed, words...)` stream.
pub fn rng_for(seed: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, words))
}
