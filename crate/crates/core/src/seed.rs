// SPDX-License-Identifier: MIT OR Apache-2.0

//! Purpose-keyed seed derivation.
//!
//! Every random draw in the crate comes from a generator seeded by
//! `derive(root, purpose, indices)`. Two call sites that use different
//! purpose strings never share a stream, and no global RNG exists.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hash `(root, purpose, indices...)` into a child seed.
pub fn derive(root: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A ChaCha8 generator seeded from [`derive`].
pub fn rng(root: u64, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, purpose, indices))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
