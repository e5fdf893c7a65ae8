//! Expert solver, environment wrapper and the non-DEDT baselines.

mod ao;
mod env;
mod ppo;
mod random;
mod rc;

pub use ao::{ao_optimize, ao_trace, AoConfig, AoResult};
pub use env::{BeamEnv, MaskMode, Observation, PerfectView, RandomFillView, StateView, Step};
pub use ppo::{pairs_to_phases, ppo_train, PpoConfig, PpoOutcome, PpoPolicy};
pub use random::random_phases;
pub use rc::rc_impute;
