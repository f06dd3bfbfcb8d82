//! Labeled sub-seeds derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Stable 64-bit sub-seed: first eight bytes of `sha256(master_le || label)`.
pub fn sub_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(master: u64, label: &str) -> SimRng {
    SimRng::seed_from_u64(sub_seed(master, label))
}

pub fn chain_label(chain: usize) -> String {
    format!("chain-{chain}")
}
