//! Deterministic seed derivation for independent per-task random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type CtRng = ChaCha8Rng;

/// Mixes a master seed with a task index (splitmix64 finaliser), so that
/// workers can own independent streams regardless of scheduling order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> CtRng {
    CtRng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, index: u64) -> CtRng {
    rng_from_seed(derive_seed(master, index))
}
