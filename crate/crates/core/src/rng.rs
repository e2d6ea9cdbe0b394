//! Seed derivation. Every random stream in the simulator is a ChaCha8 generator
//! keyed by a seed derived from the master seed and a path of integer labels,
//! so sub-streams never depend on how much randomness a sibling consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Stream labels, kept distinct so derived seeds never collide across purposes.
pub mod stream {
    pub const ORACLE_DIRECTIONS: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const ROUND: u64 = 3;
    pub const CHANNEL: u64 = 4;
    pub const RELABEL: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const TRACE: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const ABLATION: u64 = 10;
}
