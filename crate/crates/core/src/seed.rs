//! Deterministic RNG forking.
//!
//! Every random draw in a run comes from a generator seeded by hashing the
//! run seed together with a task label such as `p1/2/7/video-0042`. Results
//! therefore depend on what is being computed, never on which worker got
//! there first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type TaskRng = ChaCha8Rng;

/// Derives a child seed from `base` and a task label.
pub fn fork_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn task_rng(base: u64, label: &str) -> TaskRng {
    ChaCha8Rng::seed_from_u64(fork_seed(base, label))
}

/// Hash of arbitrary bytes mixed with a seed; used to key mock responses.
pub fn keyed_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(bytes);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}
