//! Deterministic randomness and stable hashing.
//!
//! [`Rng`] is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Bounded integers come from `rand` 0.8's
//! `gen_range` and shuffles from its Fisher-Yates `SliceRandom::shuffle`.
//! Both crate versions are pinned so that a seed yields the same sessions on
//! every build.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const HIT_CODE_LEN: usize = 8;
const HIT_CODE_ALPHABET: &[u8; 36] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).collect();
        self.shuffle(&mut v);
        v
    }

    /// `k` distinct values from `0..n`, uniformly, in sorted order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut v = rand::seq::index::sample(&mut self.0, n, k).into_vec();
        v.sort_unstable();
        v
    }
}

/// First 8 bytes (big-endian) of SHA-256 over the parts, each terminated by
/// a NUL byte. Stable across platforms and releases.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update([0u8]);
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(first)
}

/// Mixes a seed with a label, giving independent streams per purpose.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    stable_hash(&[&seed.to_be_bytes(), label.as_bytes()])
}

/// Per-worker session seed: the study seed mixed with a hash of the worker id.
pub fn session_seed(study_seed: u64, worker_id: &str) -> u64 {
    derive_seed(study_seed, &format!("worker:{worker_id}"))
}

/// Draws an 8-character completion code over `[A-Z0-9]`.
///
/// There are 36^8 ≈ 2.8e12 codes, so among `m` issued codes the expected
/// number of colliding pairs is about `m² / (2·36^8)`; for 100,000 codes that
/// is under 0.002. The store still rejects duplicates per study and redraws.
pub fn generate_hit_code(rng: &mut Rng) -> String {
    (0..HIT_CODE_LEN)
        .map(|_| HIT_CODE_ALPHABET[rng.below(HIT_CODE_ALPHABET.len())] as char)
        .collect()
}
