//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed mixed with a path of stream identifiers, so parallel
//! and sequential runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// Stream tags, kept distinct so no two subsystems share a stream.
pub mod stream {
    pub const CORPUS_USER: u64 = 1;
    pub const CORPUS_ITEMS: u64 = 2;
    pub const CANDIDATES: u64 = 3;
    pub const CF_INIT: u64 = 4;
    pub const CF_TRAIN: u64 = 5;
    pub const MODEL_INIT: u64 = 6;
    pub const EXAMPLES: u64 = 7;
    pub const MINE: u64 = 8;
    pub const SANDBOX: u64 = 9;
    pub const AUDIT: u64 = 10;
}
