//! Seeded randomness.
//!
//! Every stochastic step (splits, batch order, edge dropout, message dropout,
//! initialization) draws from a SplitMix64 stream whose seed is derived from
//! the run seed and a tuple of integers naming the step. Streams are therefore
//! portable across platforms and independent of evaluation order.

pub use rand::Rng;
pub use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

/// Stream purposes, mixed into derived seeds so different uses never share a stream.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EPOCH_ORDER: u64 = 3;
    pub const NEGATIVES: u64 = 4;
    pub const VIEW: u64 = 5;
    pub const MESSAGE_DROPOUT: u64 = 6;
}

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a base seed together with a list of coordinates (epoch, batch, view id, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = finalize(base.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for &p in parts {
        h = finalize(h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6));
    }
    h
}

pub fn seeded(base: u64, parts: &[u64]) -> SplitMix64 {
    SplitMix64::seed_from_u64(derive_seed(base, parts))
}

/// In-place Fisher-Yates shuffle.
///
/// Kept local instead of `rand::seq` so the permutation for a given stream is
/// fixed by this crate and not by the rand version.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64<R: Rng>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..n`, `n > 0`.
#[inline]
pub fn index<R: Rng>(rng: &mut R, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}
