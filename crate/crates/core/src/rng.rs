//! Counter-based random numbers keyed by logical coordinates.
//!
//! Every random quantity in a run is a pure function of `(seed, stream,
//! coordinates)`, so results never depend on evaluation order or on how work
//! is split across threads. The mixer is SplitMix64's finalizer applied over
//! the key words.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams. Adding a variant never perturbs existing ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SmallScale = 1,
    SmallScaleBlock = 2,
    Sigma = 3,
    Phase = 4,
    TxPower = 5,
    Scenario = 6,
    Equipped = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn fmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed, a stream and up to three coordinates into 64 random bits.
#[inline]
pub fn key(seed: u64, stream: Stream, a: u64, b: u64, c: u64) -> u64 {
    let mut h = fmix(seed.wrapping_add(GOLDEN));
    for w in [stream as u64, a, b, c] {
        h = fmix(h ^ w.wrapping_add(GOLDEN).wrapping_add(h << 6).wrapping_add(h >> 2));
    }
    h
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal variate derived from one key (Box–Muller, cosine branch).
#[inline]
pub fn std_normal(bits: u64) -> f64 {
    let u1 = unit_open(bits);
    let u2 = unit_open(fmix(bits ^ GOLDEN));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A full generator seeded from a key, for draws that need rejection
/// sampling (gamma, truncated normal).
pub fn generator(bits: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(bits)
}

/// Packs an ordered node pair into one coordinate.
#[inline]
pub fn link_key(tx: u32, rx: u32) -> u64 {
    ((tx as u64) << 32) | rx as u64
}

/// Seed for a named derived purpose, e.g. scenario generation.
pub fn derive_seed(seed: u64, stream: Stream, salt: u64) -> u64 {
    key(seed, stream, salt, 0, 0)
}
