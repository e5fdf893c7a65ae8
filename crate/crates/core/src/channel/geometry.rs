use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform rectangular RIS in the yz-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisGeometry {
    /// Elements per column (number of rows).
    pub n1: usize,
    /// Elements per row (number of columns).
    pub n2: usize,
    /// Vertical spacing in meters.
    pub d1: f64,
    /// Horizontal spacing in meters.
    pub d2: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl RisGeometry {
    pub fn new(n1: usize, n2: usize, d1: f64, d2: f64, wavelength: f64) -> Result<Self> {
        let g = Self {
            n1,
            n2,
            d1,
            d2,
            wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square-ish array with both spacings given as a fraction of the wavelength.
    pub fn with_spacing_ratio(n1: usize, n2: usize, spacing_over_lambda: f64, wavelength: f64) -> Result<Self> {
        let d = spacing_over_lambda * wavelength;
        Self::new(n1, n2, d, d, wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::Geometry(format!("empty array {}x{}", self.n1, self.n2)));
        }
        for (name, v) in [("d1", self.d1), ("d2", self.d2), ("wavelength", self.wavelength)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Total element count `N = N1 * N2`.
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n1 && col < self.n2);
        row * self.n2 + col
    }

    /// Inverse of [`RisGeometry::index`]: `(row, col)`.
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i / self.n2, i % self.n2)
    }

    /// Element area, the `d1 * d2` factor in the channel variances.
    pub fn element_area(&self) -> f64 {
        self.d1 * self.d2
    }

    /// Position `[0, row * d1, col * d2]`.
    pub fn position(&self, i: usize) -> [f64; 3] {
        let (r, c) = self.coords(i);
        [0.0, r as f64 * self.d1, c as f64 * self.d2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_a_bijection() {
        let g = RisGeometry::new(3, 5, 0.1, 0.1, 0.4).unwrap();
        let mut seen = vec![false; g.len()];
        for r in 0..g.n1 {
            for c in 0..g.n2 {
                let i = g.index(r, c);
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(g.coords(i), (r, c));
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(RisGeometry::new(0, 4, 0.1, 0.1, 1.0).is_err());
        assert!(RisGeometry::new(4, 4, -0.1, 0.1, 1.0).is_err());
        assert!(RisGeometry::new(4, 4, 0.1, 0.1, 0.0).is_err());
        assert!(RisGeometry::new(4, 4, 0.1, f64::NAN, 1.0).is_err());
    }
}
