//! Splittable, label-addressed random streams.
//!
//! A stream is named by a root seed and a path of labels. The key of the
//! underlying ChaCha generator is a SHA-256 digest of that name, so a stream
//! depends only on where it sits in the label tree, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<u64>,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        RngStream { root_seed, path: Vec::new() }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Derive a child stream. The parent is untouched and may spawn more children.
    pub fn child(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        RngStream { root_seed: self.root_seed, path }
    }

    pub fn child_str(&self, label: &str) -> Self {
        self.child(label_hash(label))
    }

    /// Shorthand for a chain of children.
    pub fn children(&self, labels: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(labels);
        RngStream { root_seed: self.root_seed, path }
    }

    /// Consume the stream and hand out its generator.
    pub fn into_rng(self) -> StreamRng {
        let mut h = Sha256::new();
        h.update(b"frilab-stream");
        h.update(self.root_seed.to_le_bytes());
        h.update((self.path.len() as u64).to_le_bytes());
        for l in &self.path {
            h.update(l.to_le_bytes());
        }
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}

/// Stable 64-bit hash of a string label (FNV-1a; stable across builds).
pub fn label_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
