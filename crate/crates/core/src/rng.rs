//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a 64-bit value mixed here, so results never depend on thread
//! scheduling or call order across independent units of work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5CA1_7000_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Round half away from zero.
pub(crate) fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds half away from zero
    x.round()
}
