//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a value derived from the master seed and a path of integers, so
//! streams never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags. Kept as constants so two call sites cannot silently share a stream.
pub mod stream {
    pub const SYNTHETIC: u64 = 1;
    pub const PUBLIC_SUBSET: u64 = 2;
    pub const REFERENCE_KMEANS: u64 = 3;
    pub const TARGET_CLUSTERS: u64 = 4;
    pub const TARGET_CLIENT: u64 = 5;
    pub const PEER_CLIENT: u64 = 6;
    pub const CLIENT_LDP: u64 = 7;
    pub const SERVER_KMEANS: u64 = 8;
    pub const MODEL_INIT: u64 = 9;
    pub const LOCAL_TRAIN: u64 = 10;
    pub const ATTACK: u64 = 11;
    pub const REPEAT: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `base` together with `path` into a new 64-bit seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, path: &[u64]) -> SimRng {
    rng(derive(base, path))
}
