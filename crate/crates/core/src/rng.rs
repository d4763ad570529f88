//! Seed plumbing. Every random stream is a ChaCha8 generator whose seed is
//! derived from a parent seed and a stage label:
//!
//! ```text
//! child = first 8 bytes (LE) of SHA-256(parent.to_le_bytes() || label)
//! ```
//!
//! Streams are keyed by name rather than by draw order, so introducing a new
//! stage leaves every existing stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type XRng = ChaCha8Rng;

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_from(seed: u64) -> XRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, label: &str) -> XRng {
    rng_from(derive_seed(parent, label))
}
