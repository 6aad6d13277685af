//! Stable per-episode seed derivation.
//!
//! Seeds are a SplitMix64 hash chain over `(master, salt_0, salt_1, ...)`, so
//! an episode's random stream depends only on its coordinates in a suite and
//! never on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, salts: &[u64]) -> u64 {
    salts
        .iter()
        .fold(splitmix64(master), |h, s| splitmix64(h ^ splitmix64(*s)))
}

pub fn derive_rng(master: u64, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, salts))
}

/// Folds a short ASCII tag into a salt, for naming random streams.
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}
