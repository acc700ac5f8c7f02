//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a base seed mixed with a tag path, so streams are independent
//! of thread scheduling and of the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a sequence of tags into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x51))))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    rng_from(derive_seed(base, tags))
}

/// Stream tags, kept in one place so two subsystems never share a stream.
pub mod tag {
    pub const LAYOUT: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const ROLLOUT: u64 = 4;
    pub const UPDATE: u64 = 5;
    pub const PAIRING: u64 = 6;
    pub const DISC: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const HELDOUT: u64 = 9;
    pub const STAGE2: u64 = 10;
}
