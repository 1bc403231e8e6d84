//! Seed derivation for reproducible, schedule-independent randomness.
//!
//! Every parallelizable unit of work (an instance, a pool sample, a
//! recursion arm) gets its own RNG stream derived with [`child_seed`], so
//! sequential and parallel schedules produce identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-avalanche mix of a 64-bit value.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a branch index.
///
/// The scheme is fixed: `mix(parent ^ mix(index + GOLDEN))`. Callers that
/// split work across threads must use the same indices they would use
/// sequentially.
pub fn child_seed(parent: u64, index: u64) -> u64 {
    mix(parent ^ mix(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Deterministic RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
