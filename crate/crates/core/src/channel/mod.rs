//! Spatially correlated RIS channels, cascading and the MRT rate.
//!
//! Elements are linearised row-major and 0-based: element `(n1, n2)` (row
//! `n1`, column `n2`) has index `i = n1 * N2 + n2`.

mod correlation;
mod geometry;
mod rate;
mod sampling;

pub use correlation::{
    build_correlation, build_correlation_with, monte_carlo_correlation, CorrelationMatrix,
    CorrelationModel, McCorrelation, PSD_CLAMP,
};
pub use geometry::RisGeometry;
pub use rate::{beam_gain, mrt_precoder, mrt_rate};
pub use sampling::{
    cascaded_correlation_stat, sample_correlated_vector, sample_slot, ChannelRealization,
    EnvConfig,
};

pub type C64 = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;
