//! Seed derivation shared by every randomized component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives the `k`-th sub-seed of `base`. Distinct `k` give independent,
/// reproducible streams.
pub fn mix(base: u64, k: u64) -> u64 {
    splitmix64(base ^ splitmix64(k.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed namespaces so unrelated consumers of one base seed never collide.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const STAGE1: u64 = 11;
    pub const STAGE2: u64 = 12;
    pub const STAGE3: u64 = 13;
    pub const RUNS: u64 = 100;
    pub const BASELINE: u64 = 200;
    pub const FINE_TUNE: u64 = 300;
    pub const SYNTHETIC: u64 = 400;
}
