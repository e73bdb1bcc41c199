//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a 64-bit
//! seed derived from a parent seed and a label:
//!
//! ```text
//! derive(parent, label) = first 8 bytes (LE) of SHA-256(parent.to_le_bytes() ++ label)
//! ```
//!
//! Derived seeds depend only on their inputs, so streams are independent of
//! iteration order and thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(parent: u64, label: &str) -> ChaCha8Rng {
    rng_from(derive_seed(parent, label))
}
