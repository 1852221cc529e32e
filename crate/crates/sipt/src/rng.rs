//! Seeded random streams.
//!
//! Every stochastic stage derives its own ChaCha8 stream from the run seed
//! and a short label, so stages can be reordered or skipped without shifting
//! each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent RNG stream from `seed` and a stage label.
///
/// The label and seed are folded together with FNV-1a, so distinct labels
/// give unrelated streams for the same run seed.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fold(seed, label))
}

/// Derives a plain sub-seed, for stages that take a seed rather than an RNG.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    fold(seed, label)
}

fn fold(seed: u64, label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(PRIME);
    }
    for b in label.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(PRIME);
    }
    h
}
