//! Deterministic seed derivation.
//!
//! Every random decision in the engine draws from a ChaCha stream whose seed
//! is derived from the run seed plus a structural address (task index,
//! candidate index, layer, ...). Derivation uses splitmix64 so the mapping is
//! stable across platforms and releases; reproducibility is a contract, not
//! an accident of hasher internals.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and a structural address.
pub fn child_seed(base: u64, address: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x6d6f_6463_6c00_0001);
    for &a in address {
        s = splitmix64(s ^ splitmix64(a));
    }
    s
}

/// A seeded, portable RNG.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over raw bytes; used for parameter checksums.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
