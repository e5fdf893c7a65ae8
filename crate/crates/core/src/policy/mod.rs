//! Decision-transformer beamforming policy.
//!
//! Actions are per-element `(cos θ, sin θ)` pairs, which keeps the regression
//! target continuous across the `±π` wrap.

mod actions;
mod model;
mod rollout;
mod train;
mod trajectory;

pub use actions::{canonicalize_phases, normalize_pairs, pairs_from_phases, phases_from_pairs, wrap_phase};
pub use model::{
    encode_tokens, normalize_state, DecisionTransformer, DtConfig, DtInputs, DtMeta, DtTrainingInfo, TokenWindow,
    HEAD_PREFIX,
};
pub use rollout::{collect_expert, dt_rollout, DiffusionView, Episode};
pub use train::{dt_loss, dt_train, fine_tune, fine_tune_with, window_batch, Checkpoint, DtTrainConfig, WindowIndex};
pub use trajectory::{build_trajectory, returns_to_go, ReplayBuffer, StoredEpisode, Trajectory};
