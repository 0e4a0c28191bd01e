//! Seed derivation. Every random stream in the crate comes from one master
//! seed hashed together with a purpose string, so results do not depend on
//! the order in which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Stable 64-bit seed for `(master, purpose)`.
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng_for(master: u64, purpose: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, purpose))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
