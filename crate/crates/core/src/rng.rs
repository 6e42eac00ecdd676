//! Deterministic random streams.
//!
//! Every stochastic step draws from a ChaCha stream whose seed is derived
//! from the root seed and a label path (phase, round, client, ...). Streams
//! never depend on execution order, so the worker count cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child node for `label` and a numeric index.
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        SeedTree {
            seed: u64::from_le_bytes(bytes),
        }
    }

    pub fn named(&self, label: &str) -> SeedTree {
        self.child(label, 0)
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}
