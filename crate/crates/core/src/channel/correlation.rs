use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RisGeometry, C64};
use crate::{Error, Result};

/// Eigenvalues in `[-PSD_CLAMP, 0)` are rounding noise and are clamped to zero;
/// anything more negative means the matrix is broken.
pub const PSD_CLAMP: f64 = 1e-10;

/// How the spatial correlation between two elements is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationModel {
    /// `sinc(2π d2 (n2 - m2) / λ)`: only the horizontal offset enters.
    #[default]
    ColumnOffset,
    /// `sinc(2π ‖p_i - p_l‖ / λ)`, the exact isotropic-scattering value for
    /// planar arrays. Agrees with `ColumnOffset` whenever the rows coincide.
    Euclidean,
}

/// Spatial correlation `R` together with a lower-triangular factor `L`,
/// `L Lᵀ = R`, used to draw correlated Gaussian vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    r: DMatrix<f64>,
    factor: DMatrix<f64>,
    model: CorrelationModel,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

pub fn build_correlation(geometry: &RisGeometry) -> Result<CorrelationMatrix> {
    build_correlation_with(geometry, CorrelationModel::ColumnOffset)
}

pub fn build_correlation_with(
    geometry: &RisGeometry,
    model: CorrelationModel,
) -> Result<CorrelationMatrix> {
    geometry.validate()?;
    let n = geometry.len();
    let k = 2.0 * PI / geometry.wavelength;
    let r = DMatrix::from_fn(n, n, |i, l| match model {
        CorrelationModel::ColumnOffset => {
            let (_, ci) = geometry.coords(i);
            let (_, cl) = geometry.coords(l);
            sinc(k * geometry.d2 * (ci as f64 - cl as f64))
        }
        CorrelationModel::Euclidean => {
            let pi = geometry.position(i);
            let pl = geometry.position(l);
            let dist = ((pi[1] - pl[1]).powi(2) + (pi[2] - pl[2]).powi(2)).sqrt();
            sinc(k * dist)
        }
    });
    CorrelationMatrix::from_matrix(r, model)
}

impl CorrelationMatrix {
    /// Checks PSD-ness, clamps rounding noise and factorises.
    pub fn from_matrix(r: DMatrix<f64>, model: CorrelationModel) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::Shape(format!("correlation {}x{}", r.nrows(), r.ncols())));
        }
        let eig = r.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_CLAMP {
            return Err(Error::NotPsd(min));
        }
        let clamped = if min < 0.0 {
            let vals = eig.eigenvalues.map(|v| v.max(0.0));
            let mut rebuilt =
                &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            // keep exact symmetry after the round trip
            rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
            rebuilt
        } else {
            r.clone()
        };
        let factor = semidefinite_cholesky(&clamped);
        Ok(Self { r, factor, model })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn model(&self) -> CorrelationModel {
        self.model
    }

    pub fn len(&self) -> usize {
        self.r.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.r.nrows() == 0
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.r[(i, l)]
    }
}

/// Cholesky that tolerates rank deficiency: a pivot that has collapsed to
/// (numerically) zero yields an all-zero column.
fn semidefinite_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-9 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    l
}

/// Sample estimate of `E[γ γᴴ]` under isotropic scattering.
#[derive(Debug, Clone)]
pub struct McCorrelation {
    pub real: DMatrix<f64>,
    pub imag: DMatrix<f64>,
}

impl McCorrelation {
    pub fn max_abs_imag(&self) -> f64 {
        self.imag.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Monte-Carlo integration of the array-response outer product.
///
/// Azimuth is uniform on `[-π/2, π/2]`; elevation has density `cos(β)/2` and
/// is drawn by inverse CDF, `β = asin(2u - 1)`.
pub fn monte_carlo_correlation(
    geometry: &RisGeometry,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<McCorrelation> {
    geometry.validate()?;
    if samples == 0 {
        return Err(Error::Domain("monte_carlo_correlation needs at least one sample".into()));
    }
    let n = geometry.len();
    let k = 2.0 * PI / geometry.wavelength;
    let positions: Vec<[f64; 3]> = (0..n).map(|i| geometry.position(i)).collect();
    let mut acc = vec![C64::new(0.0, 0.0); n * n];
    let mut gamma = vec![C64::new(0.0, 0.0); n];
    for _ in 0..samples {
        let alpha = rng.random_range(-PI / 2.0..=PI / 2.0);
        let u: f64 = rng.random();
        let beta = (2.0 * u - 1.0).asin();
        let q = [
            k * alpha.cos() * beta.cos(),
            k * alpha.sin() * beta.cos(),
            k * beta.sin(),
        ];
        for (g, p) in gamma.iter_mut().zip(&positions) {
            let phase = q[0] * p[0] + q[1] * p[1] + q[2] * p[2];
            *g = C64::from_polar(1.0, phase);
        }
        for i in 0..n {
            let gi = gamma[i];
            let row = &mut acc[i * n..(i + 1) * n];
            for (a, gl) in row.iter_mut().zip(&gamma) {
                *a += gi * gl.conj();
            }
        }
    }
    let s = samples as f64;
    Ok(McCorrelation {
        real: DMatrix::from_fn(n, n, |i, l| acc[i * n + l].re / s),
        imag: DMatrix::from_fn(n, n, |i, l| acc[i * n + l].im / s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn geom(n1: usize, n2: usize, d_over_lambda: f64) -> RisGeometry {
        RisGeometry::with_spacing_ratio(n1, n2, d_over_lambda, 0.1).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let g = geom(4, 4, 0.5);
        let c = build_correlation(&g).unwrap();
        for i in 0..g.len() {
            assert_eq!(c.get(i, i), 1.0);
        }
        assert!(c.get(g.index(0, 0), g.index(0, 1)).abs() < 1e-12);
        assert!(c.get(g.index(2, 3), g.index(1, 2)).abs() < 1e-12);

        let g = geom(4, 4, 0.25);
        let c = build_correlation(&g).unwrap();
        let v = c.get(g.index(0, 1), g.index(0, 2));
        assert!((v - 2.0 / PI).abs() < 1e-12, "{v}");
        // the row offset plays no part
        assert_eq!(c.get(g.index(0, 2), g.index(3, 2)), 1.0);
        assert!((c.get(g.index(0, 1), g.index(3, 2)) - 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn equal_column_offsets_give_equal_entries() {
        let g = geom(3, 5, 0.3);
        let c = build_correlation(&g).unwrap();
        for i in 0..g.len() {
            for l in 0..g.len() {
                let off = g.coords(i).1 as i64 - g.coords(l).1 as i64;
                let reference = c.get(g.index(0, off.unsigned_abs() as usize), g.index(0, 0));
                assert!((c.get(i, l) - reference).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn properties_hold_on_the_geometry_grid() {
        for &n1 in &[1usize, 2, 4, 8] {
            for &n2 in &[1usize, 2, 4, 8] {
                for &ratio in &[0.1, 0.25, 0.5, 1.0] {
                    for model in [CorrelationModel::ColumnOffset, CorrelationModel::Euclidean] {
                        let g = geom(n1, n2, ratio);
                        let c = build_correlation_with(&g, model)
                            .unwrap_or_else(|e| panic!("{n1}x{n2} d/λ={ratio} {model:?}: {e}"));
                        let r = c.matrix();
                        assert_eq!(r, &r.transpose());
                        assert!(r.diagonal().iter().all(|&d| d == 1.0));
                        let rebuilt = c.factor() * c.factor().transpose();
                        let err = (&rebuilt - r).amax();
                        assert!(err < 1e-6, "{n1}x{n2} d/λ={ratio} {model:?}: LLᵀ err {err}");
                        for i in 0..c.len() {
                            for j in (i + 1)..c.len() {
                                assert_eq!(c.factor()[(i, j)], 0.0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CorrelationMatrix::from_matrix(r, CorrelationModel::ColumnOffset),
            Err(Error::NotPsd(_))
        ));
    }

    #[test]
    fn clamps_rounding_noise() {
        // rank-one matrix nudged to a tiny negative eigenvalue
        let mut r = DMatrix::from_element(3, 3, 1.0);
        r[(0, 1)] -= 1e-12;
        r[(1, 0)] -= 1e-12;
        let c = CorrelationMatrix::from_matrix(r.clone(), CorrelationModel::ColumnOffset).unwrap();
        assert!((c.factor() * c.factor().transpose() - r).amax() < 1e-8);
    }

    #[test]
    fn single_sample_is_rank_one_with_unit_diagonal() {
        let g = geom(2, 3, 0.25);
        let mut r = rng::stream(1, "mc");
        let mc = monte_carlo_correlation(&g, 1, &mut r).unwrap();
        for i in 0..g.len() {
            assert!((mc.real[(i, i)] - 1.0).abs() < 1e-12);
            assert!(mc.imag[(i, i)].abs() < 1e-12);
        }
        let full = DMatrix::from_fn(g.len(), g.len(), |i, l| C64::new(mc.real[(i, l)], mc.imag[(i, l)]));
        let sv = full.singular_values();
        assert!(sv[1] < 1e-9 * sv[0], "{sv}");
        assert!(monte_carlo_correlation(&g, 0, &mut r).is_err());
    }

    #[test]
    fn monte_carlo_agrees_on_single_row_arrays() {
        // with one row the column-offset form is exact
        let g = geom(1, 4, 0.25);
        let mut r = rng::stream(3, "mc");
        let mc = monte_carlo_correlation(&g, 50_000, &mut r).unwrap();
        let c = build_correlation(&g).unwrap();
        assert!((&mc.real - c.matrix()).amax() < 0.03);
        assert!(mc.max_abs_imag() < 0.03);
    }
}
