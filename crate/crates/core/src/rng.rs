//! Seeded random streams. Every trial owns one 64-bit seed; each kind of
//! randomness inside a trial reads its own ChaCha stream so that changing
//! one draw count never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Independent stream identifiers within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Population = 1,
    Utility = 2,
    Privacy = 3,
    Noise = 4,
    Capacity = 5,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under experiment seed `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    mix(mix(base) ^ index.wrapping_mul(0xD605_BBB5_8C8A_BBFD))
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
