use std::f64::consts::PI;

use crate::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// `[cos θ_0, sin θ_0, cos θ_1, sin θ_1, ...]`.
pub fn pairs_from_phases(phases: &[f64]) -> Vec<f64> {
    phases.iter().flat_map(|t| [t.cos(), t.sin()]).collect()
}

/// Phases from interleaved pairs via `atan2`. Pairs need not be unit norm.
pub fn phases_from_pairs(pairs: &[f64]) -> Result<Vec<f64>> {
    if pairs.len() % 2 != 0 {
        return Err(Error::Shape(format!("odd action length {}", pairs.len())));
    }
    pairs
        .chunks_exact(2)
        .map(|p| {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::Domain("non-finite action pair".into()));
            }
            if p[0] == 0.0 && p[1] == 0.0 {
                return Err(Error::Domain("zero-norm action pair".into()));
            }
            Ok(p[1].atan2(p[0]))
        })
        .collect()
}

/// Scales every pair to unit norm in place.
pub fn normalize_pairs(pairs: &mut [f64]) -> Result<()> {
    for p in pairs.chunks_exact_mut(2) {
        let norm = p[0].hypot(p[1]);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Domain(format!("action pair with norm {norm}")));
        }
        p[0] /= norm;
        p[1] /= norm;
    }
    Ok(())
}

/// Rotates all phases so element 0 sits at 0, wrapped into `(-π, π]`.
pub fn canonicalize_phases(phases: &[f64]) -> Vec<f64> {
    let Some(&first) = phases.first() else {
        return Vec::new();
    };
    phases.iter().map(|t| wrap_phase(t - first)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn examples() {
        assert_eq!(phases_from_pairs(&[1.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(phases_from_pairs(&[0.0, 1.0]).unwrap(), vec![PI / 2.0]);
        assert_eq!(phases_from_pairs(&[-1.0, 0.0]).unwrap(), vec![PI]);
        assert!(phases_from_pairs(&[0.0, 0.0]).is_err());
        assert!(phases_from_pairs(&[1.0]).is_err());
        assert_eq!(wrap_phase(-PI), PI);
        assert_eq!(canonicalize_phases(&[1.0, 1.5])[0], 0.0);
    }

    #[test]
    fn round_trip_on_random_phases() {
        let mut r = stream(0, "t");
        let phases: Vec<f64> = (0..1000).map(|_| r.random_range(-PI..PI)).collect();
        let back = phases_from_pairs(&pairs_from_phases(&phases)).unwrap();
        let worst = phases.iter().zip(&back).map(|(a, b)| wrap_phase(a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    proptest! {
        #[test]
        fn normalized_pairs_are_unit(v in prop::collection::vec(0.01f64..10.0, 1..20), s in prop::collection::vec(-1.0f64..1.0, 20)) {
            let mut pairs: Vec<f64> = v.iter().zip(&s).flat_map(|(m, a)| [m * a.cos(), m * a.sin()]).collect();
            normalize_pairs(&mut pairs).unwrap();
            for p in pairs.chunks_exact(2) {
                prop_assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn wrap_lands_in_half_open_interval(t in -100.0f64..100.0) {
            let w = wrap_phase(t);
            prop_assert!(w > -PI && w <= PI);
            prop_assert!(((t - w) / (2.0 * PI) - ((t - w) / (2.0 * PI)).round()).abs() < 1e-9);
        }
    }
}
