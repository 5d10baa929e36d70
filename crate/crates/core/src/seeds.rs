//! Named random sub-streams derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const CORPUS: &str = "corpus";
pub const INIT: &str = "init";
pub const DROPOUT: &str = "dropout";
pub const BATCHING: &str = "batching";

/// Deterministic generator for `label` under `seed`. Different labels select
/// independent ChaCha streams of the same key.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(label.as_bytes());
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng
}

/// Seed of a child stream, for components that reseed per phase or pair.
pub fn child_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
