//! Seeded randomness.
//!
//! Every randomized operation draws from ChaCha8 (`rand_chacha` 0.9) seeded
//! with `seed_from_u64(seed)` and a stream id chosen by the caller. The
//! algorithm is part of the reproducibility contract: changing it changes
//! every split, fold plan and trained model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream ids reserved per purpose, so a seed can feed several independent
/// consumers without correlation.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const INIT: u64 = 4;
    pub const DP_NOISE: u64 = 5;
    pub const MECHANISM: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const PERMUTATION: u64 = 8;
    pub const FED_SELECT: u64 = 9;
    pub const FED_PARTITION: u64 = 10;
    pub const MIA: u64 = 11;
    /// Batch order for epoch `e` uses stream `EPOCH_BASE + e`.
    pub const EPOCH_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed; used where one seed drives a family of sub-runs.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
