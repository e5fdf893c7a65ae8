//! Conditional denoising diffusion for cascaded-CSI imputation.
//!
//! The full channel is vectorised into a real `2NM` vector; a subset of RIS
//! elements is observed (with estimation noise) and used as the condition
//! from which the remaining elements are generated by reverse diffusion.

mod csi;
mod denoiser;
mod imputer;
mod process;
mod schedule;
mod train;

pub use csi::{
    devectorize, extract_condition, nmse, observed_count, vectorize, Condition, CsiVector,
    MaskPattern, NmseAccumulator,
};
pub use denoiser::{ConditionBatch, Denoiser, DenoiserConfig, NoisePredictor};
pub use imputer::{impute_batch, impute_csi, Imputer, ImputerMeta, TrainingInfo};
pub use process::{forward_diffuse, forward_step, reverse_step, reverse_step_with_noise};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleSpec};
pub use train::{dm_loss, dm_train_step, train_denoiser, DmTrainConfig, KSampling, TrainExample};
