//! Seeded random streams.
//!
//! Every source of randomness in the workbench is derived from one root seed
//! and a stream name, so each component can be re-run on its own and still
//! see the same numbers it saw inside a full pipeline run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type WorkRng = ChaCha8Rng;

/// Named sub-streams used by the pipeline.
pub mod streams {
    pub const DATASET: &str = "dataset";
    pub const MASK: &str = "mask";
    pub const DM_TRAIN: &str = "dm-train";
    pub const DT_TRAIN: &str = "dt-train";
    pub const ROLLOUT: &str = "rollout";
    pub const INIT: &str = "init";
    pub const PPO: &str = "ppo";
    pub const EVAL: &str = "eval";
}

/// Derives an independent generator from `(root, name, index)`.
pub fn derive(root: u64, name: &str, index: u64) -> WorkRng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    WorkRng::from_seed(seed)
}

pub fn stream(root: u64, name: &str) -> WorkRng {
    derive(root, name, 0)
}

/// Splits a child generator off an existing one.
pub fn fork(rng: &mut WorkRng) -> WorkRng {
    let mut seed = [0u8; 32];
    rng.fill(&mut seed);
    WorkRng::from_seed(seed)
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
