use std::f64::consts::PI;

use rand::Rng;

/// Independent phases uniform on `(-π, π]`.
pub fn random_phases(elements: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..elements).map(|_| PI - rng.random_range(0.0..2.0 * PI)).collect()
}
