//! Splittable seeding.
//!
//! A [`SeedStream`] is a 64-bit key. Children are derived by mixing the key
//! with a label, so every stochastic decision (shuffle, crop, mask, init) gets
//! its own independent generator keyed by where it happens, not by how many
//! numbers were drawn before it. The generator behind a key is ChaCha8, which
//! is itself counter based.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix64(seed) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream for a named purpose.
    pub fn named(&self, label: &str) -> Self {
        Self { key: splitmix64(self.key ^ splitmix64(label_hash(label))) }
    }

    /// Child stream for an integer coordinate (step, sample index, ...).
    pub fn at(&self, index: u64) -> Self {
        Self { key: splitmix64(self.key.rotate_left(17) ^ splitmix64(index.wrapping_add(1))) }
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

/// Standard normal sample via Box-Muller.
pub fn normal(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
