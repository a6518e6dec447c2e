//! Seed derivation for independent deterministic streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed, a stream tag and an index.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

pub fn rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, index))
}

pub(crate) const ASSIGN: u64 = 1;
pub(crate) const CHOICES: u64 = 2;
pub(crate) const WORKER_STEP: u64 = 3;
pub(crate) const DATASET: u64 = 4;
pub(crate) const POPULATION: u64 = 5;
pub(crate) const SALIENCY: u64 = 6;
