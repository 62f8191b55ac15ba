//! Seed derivation. Every stage draws from `stage_seed(root, name)` so any
//! stage can be re-run in isolation and reproduce the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `fnv1a(stage_name) XOR root`.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    fnv1a(stage.as_bytes()) ^ root
}
