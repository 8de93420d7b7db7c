//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of `(master seed, key path)`, so results do not depend on evaluation
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep different consumers of one master seed apart.
pub mod tag {
    pub const INITIAL_STATE: u64 = 0x1001;
    pub const NOISE: u64 = 0x1002;
    pub const PERMUTATION: u64 = 0x1003;
    pub const WISHART: u64 = 0x1004;
    pub const SYSTEM: u64 = 0x1005;
    pub const COST: u64 = 0x1006;
    pub const TRIAL: u64 = 0x1007;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a key path.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}
