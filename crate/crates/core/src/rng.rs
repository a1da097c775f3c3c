//! Counter-based seeding. Every random stream is derived from a base seed and
//! a key (replication index, participant id, ...), so results do not depend
//! on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Generator for the stream identified by `key` under `seed`.
pub fn keyed_rng(seed: u64, key: &[u8]) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key);
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Generator for replication `index` under `seed`.
pub fn replication_rng(seed: u64, index: u64) -> Rng {
    keyed_rng(seed, &index.to_le_bytes())
}
