//! Seed splitting.
//!
//! Every random quantity is a pure function of a 64-bit seed. Replica `k`
//! of a batch uses `split(base, k)`, so results never depend on how the
//! replicas are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier of the generator + mixer pair; stamped into every report.
pub const MIXER_ID: &str = "chacha8-splitmix64-v1";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Golden-ratio mix of a stream index. Never zero for small `k`.
pub fn golden_mix(k: u64) -> u64 {
    splitmix64(k.wrapping_add(1).wrapping_mul(GOLDEN))
}

/// Child seed `k` of `base`.
pub fn split(base: u64, k: u64) -> u64 {
    base ^ golden_mix(k)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
