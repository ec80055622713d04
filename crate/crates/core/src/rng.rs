//! Deterministic random streams.
//!
//! All randomness in the workspace flows from a single master seed through
//! named substreams. A substream is identified by a label (and optionally a
//! worker index), so concurrent components never share or race on one
//! generator, and results are reproducible for a fixed master seed
//! regardless of thread count.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(init: u64, bytes: &[u8]) -> u64 {
    let mut h = init;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// splitmix64 finalizer; decorrelates nearby inputs.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a 64-bit seed for the substream `(label, index)` of `master`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, label.as_bytes());
    mix(master ^ mix(h) ^ mix(index.wrapping_mul(0x9e3779b97f4a7c15)))
}

/// A named substream of the master seed.
pub fn substream(master: u64, label: &str) -> ChaCha8Rng {
    indexed_substream(master, label, 0)
}

/// A named, indexed substream (one per worker chunk).
pub fn indexed_substream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}
