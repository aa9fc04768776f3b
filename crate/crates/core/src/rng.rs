//! Seed derivation and the counter-based noise source.
//!
//! Every random stream in a run is derived from one top-level seed by
//! hashing a path of labels, so a stream never depends on how many draws
//! another stream consumed.

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

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Child seed named by `label`.
pub fn derive(parent: u64, label: &str) -> u64 {
    mix64(parent ^ mix64(fnv1a(label.as_bytes())))
}

/// Child seed named by an integer index.
pub fn derive_index(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in (0, 1] keyed by (seed, row, attribute id).
///
/// The interval is open at zero so that a corruption probability of exactly
/// 0 never fires and exactly 1 always fires under the `noise <= p` rule.
#[inline]
pub fn uniform_noise(seed: u64, row: u64, attribute: u64) -> f64 {
    let h = mix64(mix64(seed ^ mix64(attribute)) ^ row);
    ((h >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
