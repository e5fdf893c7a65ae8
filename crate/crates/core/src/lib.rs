//! Workbench for RIS-assisted downlinks: correlated channel generation,
//! diffusion-based imputation of the cascaded CSI from a masked subset of
//! elements, and a decision-transformer phase-shift policy trained offline on
//! expert trajectories.

pub mod baselines;
pub mod channel;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
