//! Seeded random-number contract.
//!
//! Every stochastic routine in this crate takes an explicit 64-bit seed and
//! draws from a [`ChaCha8Rng`]. ChaCha8 is a counter-based generator with a
//! platform-independent stream, so results are bit-reproducible across
//! machines and across serial/parallel execution.
//!
//! Independent streams (per ensemble repeat, per campaign step, per
//! Monte-Carlo shard) are derived with [`derive_seed`], which mixes the
//! index into the base seed through SplitMix64. Derivation is pure, so
//! shards can be evaluated in any order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer (Steele, Lea, Flood 2014). Bijective on `u64`.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and an index.
///
/// `derive_seed(base, i)` and `derive_seed(base, j)` give uncorrelated
/// streams for `i != j`; the mapping does not depend on evaluation order.
#[inline]
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x243F_6A88_85A3_08D3)))
}

/// The generator used throughout the crate, seeded explicitly.
#[inline]
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
