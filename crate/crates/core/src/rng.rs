//! Counter-based, splittable random streams.
//!
//! Every consumer derives its own ChaCha8 keystream from
//! `(master seed, purpose label, index)`. There is no global generator, so
//! any stream can be reproduced in isolation and streams never overlap
//! regardless of the order in which they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// A node in the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

fn derive_key(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent keystream for `(label, index)` under this node.
    pub fn rng(&self, label: &str, index: u64) -> StreamRng {
        ChaCha8Rng::from_seed(derive_key(self.master, label, index))
    }

    /// Sub-tree for a nested consumer (e.g. one sweep condition).
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        let key = derive_key(self.master, label, index);
        SeedTree {
            master: u64::from_le_bytes(key[..8].try_into().expect("8 bytes")),
        }
    }
}
