//! Seed derivation. Every random stream in the crate comes from one user seed
//! mixed with a stream label, so stages never share or reorder draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 42;

/// SplitMix64 finalizer over `seed ⊕ stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stream labels.
pub mod streams {
    pub const TENSOR_POINTS: u64 = 1;
    pub const COEFF_POINTS: u64 = 2;
    pub const CPD: u64 = 3;
    pub const GENERATOR: u64 = 4;
    pub const CPD_RESTART_BASE: u64 = 0x1000;
}
