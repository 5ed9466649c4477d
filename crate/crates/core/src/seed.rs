//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a 64-bit seed mixed from a parent seed and a stream tag,
//! so results depend only on `(seed, tag)` and never on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `seed` for stream `tag`.
#[inline]
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

/// Stream tags used across the crate.
pub mod tag {
    pub const ENCODER_GROUND: u64 = 0x10;
    pub const ENCODER_SATELLITE: u64 = 0x11;
    pub const GROUND_MAP: u64 = 0x20;
    pub const SATELLITE_MAP: u64 = 0x28;
    pub const NEC: u64 = 0x30;
    pub const SCENE: u64 = 0x40;
    pub const NOISE: u64 = 0x41;
    pub const AUGMENT: u64 = 0x50;
    pub const SHUFFLE: u64 = 0x60;
}
