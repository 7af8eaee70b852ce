//! Seeded randomness shared by every stochastic step.
//!
//! A [`RandomSource`] is a ChaCha20 stream addressed by `(seed, stream_id)`.
//! Independent sub-streams are obtained with [`RandomSource::derive`], which
//! depends only on the parent's address and a label, never on how many values
//! the parent has already produced. Parallel work therefore stays
//! bit-reproducible regardless of scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh source on a sub-stream identified by `label`.
    pub fn derive(&self, label: u64) -> RandomSource {
        RandomSource::new(self.seed, mix(self.stream_id, label))
    }

    /// Shorthand for a two-level derivation, e.g. `(cell, repetition)`.
    pub fn derive2(&self, a: u64, b: u64) -> RandomSource {
        self.derive(a).derive(b)
    }
}

// splitmix64 finalizer over the pair; collisions between distinct
// (parent, label) pairs are negligible for our stream counts.
fn mix(parent: u64, label: u64) -> u64 {
    let mut z = parent
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(label)
        .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
