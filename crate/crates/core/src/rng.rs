//! Named random streams derived from one root seed.
//!
//! Each stream is seeded with `sha256(root_le || name)`, so drawing from one
//! stream never shifts another. Toggling a module on or off therefore leaves
//! every other draw of a run untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const WORLD: &str = "world";
pub const SHOTS: &str = "shots";
pub const IFC_INIT: &str = "ifc-init";
pub const HEAD_INIT: &str = "head-init";
pub const AUGMENTATION: &str = "augmentation";
pub const BATCHES: &str = "batches";
pub const BASE_BATCHES: &str = "base-batches";
pub const EVAL: &str = "eval";
pub const GEN: &str = "gen";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        SeedStreams { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update(name.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}
