//! Deterministic seed derivation.
//!
//! All randomness in the toolkit flows from one root seed. Each pipeline
//! stage derives its own stream with a documented label so that, e.g.,
//! changing the number of pretraining epochs never perturbs the ingest
//! shuffle. Stage labels in use: `"ingest"`, `"pretrain"`, `"fewshot"`,
//! `"crypto"`, plus iteration-scoped labels like `"pretrain/iter3"`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a stage seed from the root seed and a stage label.
///
/// The derivation is `SHA-256(root_le_bytes || label)` truncated to the
/// first eight bytes (little-endian), which is stable across platforms
/// and releases.
pub fn stage_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded RNG for a pipeline stage.
pub fn stage_rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(root, label))
}
