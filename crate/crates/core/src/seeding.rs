//! Seed derivation for independent, addressable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of keys into one seed; order matters.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// A ChaCha stream keyed by `parts`.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

// Domain tags keep streams for different purposes apart.
pub(crate) const TAG_AGENT: u64 = 0xA6E7;
pub(crate) const TAG_TIES: u64 = 0x7135;
pub(crate) const TAG_FUZZ: u64 = 0xF022;
pub(crate) const TAG_MONITOR: u64 = 0x3017;
