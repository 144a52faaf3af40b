//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, domain, a, b)` — e.g. `(run seed, STRONG_AUG, iteration, sample)`.
//! Streams are independent of each other and of scheduling, which is what
//! makes batch augmentation safe to fan out across threads: a sample's
//! transforms depend only on its key, never on the order of draws elsewhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_INIT: u64 = 1;
pub const DOMAIN_WEAK_LABELED: u64 = 2;
pub const DOMAIN_WEAK_UNLABELED: u64 = 3;
pub const DOMAIN_STRONG: u64 = 4;
pub const DOMAIN_LABELED_ORDER: u64 = 5;
pub const DOMAIN_UNLABELED_ORDER: u64 = 6;
pub const DOMAIN_GEN: u64 = 7;
pub const DOMAIN_SPLIT: u64 = 8;

/// Independent deterministic stream for the given key.
pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
