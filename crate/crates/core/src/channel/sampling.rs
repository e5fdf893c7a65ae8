use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CMatrix, CVector, CorrelationMatrix, CorrelationModel, RisGeometry, C64};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// One wireless scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub name: String,
    pub geometry: RisGeometry,
    /// BS antenna count `M`.
    pub antennas: usize,
    /// Per-antenna average intensity attenuation of the BS-RIS link (length `M`).
    pub mu_m: Vec<f64>,
    /// RIS-user attenuation.
    pub mu_0: f64,
    /// Element area `d1 * d2` in m². Not to be confused with `noise_var`.
    pub sigma_area: f64,
    /// Transmit power (linear, W).
    pub power: f64,
    /// Receiver noise variance (linear, W).
    pub noise_var: f64,
    /// Slots per episode.
    pub slots: usize,
    pub seed: u64,
    #[serde(default)]
    pub correlation: CorrelationModel,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let bad = |what: String| Err(Error::Config(format!("env {}: {what}", self.name)));
        if self.antennas == 0 {
            return bad("M must be >= 1".into());
        }
        if self.slots == 0 {
            return bad("T must be >= 1".into());
        }
        if self.mu_m.len() != self.antennas {
            return bad(format!("mu_m has {} entries for M = {}", self.mu_m.len(), self.antennas));
        }
        if !(self.power > 0.0 && self.noise_var > 0.0) {
            return bad("P and noise_var must be positive".into());
        }
        if !(self.sigma_area > 0.0) || !(self.mu_0 > 0.0) || self.mu_m.iter().any(|&m| !(m > 0.0)) {
            return bad("attenuations and element area must be positive".into());
        }
        Ok(())
    }

    pub fn elements(&self) -> usize {
        self.geometry.len()
    }

    /// Expected `E|H[n,m]|²` averaged over antennas.
    pub fn cascaded_entry_power(&self) -> f64 {
        let mean_mu = self.mu_m.iter().sum::<f64>() / self.mu_m.len() as f64;
        self.sigma_area * self.mu_0 * self.sigma_area * mean_mu
    }
}

/// One slot of channel state: `G` (N×M), `h` (N) and the cascade
/// `H = diag(hᴴ) G`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub g: CMatrix,
    pub h: CVector,
    pub cascaded: CMatrix,
}

impl ChannelRealization {
    pub fn from_parts(g: CMatrix, h: CVector) -> Result<Self> {
        if g.nrows() != h.len() {
            return Err(Error::Shape(format!("G has {} rows, h has {}", g.nrows(), h.len())));
        }
        let cascaded = CMatrix::from_fn(g.nrows(), g.ncols(), |n, m| h[n].conj() * g[(n, m)]);
        Ok(Self { g, h, cascaded })
    }
}

/// Draws `L z sqrt(variance)` with `z ~ CN(0, I)`.
pub fn sample_correlated_vector(
    corr: &CorrelationMatrix,
    variance: f64,
    rng: &mut impl Rng,
) -> Result<CVector> {
    if !(variance >= 0.0) {
        return Err(Error::Domain(format!("variance must be >= 0, got {variance}")));
    }
    let n = corr.len();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let z = CVector::from_fn(n, |_, _| {
        C64::new(standard_normal(rng) * half, standard_normal(rng) * half)
    });
    let l = corr.factor();
    let s = variance.sqrt();
    Ok(CVector::from_fn(n, |i, _| {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=i {
            acc += z[k] * l[(i, k)];
        }
        acc * s
    }))
}

pub fn sample_slot(env: &EnvConfig, corr: &CorrelationMatrix, rng: &mut impl Rng) -> Result<ChannelRealization> {
    let n = env.elements();
    if corr.len() != n {
        return Err(Error::Shape(format!("correlation is {0}x{0} for N = {n}", corr.len())));
    }
    let mut g = CMatrix::zeros(n, env.antennas);
    for (m, &mu) in env.mu_m.iter().enumerate() {
        let col = sample_correlated_vector(corr, env.sigma_area * mu, rng)?;
        g.set_column(m, &col);
    }
    let h = sample_correlated_vector(corr, env.sigma_area * env.mu_0, rng)?;
    ChannelRealization::from_parts(g, h)
}

/// Empirical normalised correlation of cascaded entries, pooled over antennas:
/// `Ĉ[i,l] / sqrt(Ĉ[i,i] Ĉ[l,l])` with `Ĉ[i,l] = mean Re(H[i,m] conj(H[l,m]))`.
pub fn cascaded_correlation_stat(
    env: &EnvConfig,
    corr: &CorrelationMatrix,
    slots: usize,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if slots < 2 {
        return Err(Error::Domain("cascaded_correlation_stat needs at least 2 slots".into()));
    }
    let n = env.elements();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for _ in 0..slots {
        let slot = sample_slot(env, corr, rng)?;
        let h = &slot.cascaded;
        for m in 0..h.ncols() {
            for i in 0..n {
                let hi = h[(i, m)];
                for l in 0..n {
                    acc[(i, l)] += (hi * h[(l, m)].conj()).re;
                }
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| acc[(i, i)]).collect();
    Ok(DMatrix::from_fn(n, n, |i, l| acc[(i, l)] / (diag[i] * diag[l]).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_correlation, build_correlation_with};
    use crate::rng;

    pub(crate) fn env(n1: usize, n2: usize, ratio: f64, m: usize, mu: f64) -> EnvConfig {
        let geometry = RisGeometry::with_spacing_ratio(n1, n2, ratio, 0.1).unwrap();
        EnvConfig {
            name: "test".into(),
            geometry,
            antennas: m,
            mu_m: vec![mu; m],
            mu_0: mu,
            sigma_area: geometry.element_area(),
            power: 1.0,
            noise_var: 1e-9,
            slots: 10,
            seed: 0,
            correlation: CorrelationModel::ColumnOffset,
        }
    }

    #[test]
    fn zero_variance_gives_zero_vector() {
        let c = build_correlation(&RisGeometry::with_spacing_ratio(2, 2, 0.25, 1.0).unwrap()).unwrap();
        let v = sample_correlated_vector(&c, 0.0, &mut rng::stream(0, "t")).unwrap();
        assert!(v.iter().all(|z| z.norm() == 0.0));
        assert!(sample_correlated_vector(&c, -1.0, &mut rng::stream(0, "t")).is_err());
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let c = build_correlation(&RisGeometry::with_spacing_ratio(4, 4, 0.25, 1.0).unwrap()).unwrap();
        let a = sample_correlated_vector(&c, 2.0, &mut rng::stream(5, "t")).unwrap();
        let b = sample_correlated_vector(&c, 2.0, &mut rng::stream(5, "t")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_correlation_gives_white_samples() {
        let g = RisGeometry::with_spacing_ratio(1, 4, 0.5, 1.0).unwrap();
        let c = build_correlation(&g).unwrap();
        assert!((c.matrix() - DMatrix::identity(4, 4)).amax() < 1e-12);
        let mut r = rng::stream(1, "t");
        let draws = 100_000;
        let mut cov = CMatrix::zeros(4, 4);
        for _ in 0..draws {
            let v = sample_correlated_vector(&c, 1.0, &mut r).unwrap();
            cov += &v * v.adjoint();
        }
        cov /= C64::new(draws as f64, 0.0);
        let err = (cov - CMatrix::identity(4, 4)).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn sample_covariance_converges_to_scaled_correlation() {
        for model in [CorrelationModel::ColumnOffset, CorrelationModel::Euclidean] {
            let g = RisGeometry::with_spacing_ratio(4, 4, 0.25, 1.0).unwrap();
            let c = build_correlation_with(&g, model).unwrap();
            let variance = 3.0;
            let mut r = rng::stream(2, "t");
            let draws = 100_000;
            let mut cov = CMatrix::zeros(16, 16);
            for _ in 0..draws {
                let v = sample_correlated_vector(&c, variance, &mut r).unwrap();
                cov += &v * v.adjoint();
            }
            cov /= C64::new(draws as f64, 0.0);
            let target = c.matrix().map(|x| C64::new(x * variance, 0.0));
            let rel = (&cov - &target).norm() / target.norm();
            assert!(rel < 0.05, "{model:?}: {rel}");
        }
    }

    #[test]
    fn zero_attenuation_gives_zero_channels() {
        let mut e = env(2, 2, 0.25, 2, 0.0);
        e.mu_m = vec![0.0, 0.0];
        let c = build_correlation(&e.geometry).unwrap();
        let s = sample_slot(&e, &c, &mut rng::stream(0, "t")).unwrap();
        assert!(s.g.iter().chain(s.h.iter()).chain(s.cascaded.iter()).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn cascade_rule_and_column_variances() {
        let e = env(4, 4, 0.25, 2, 0.5);
        let c = build_correlation(&e.geometry).unwrap();
        let mut r = rng::stream(4, "t");
        let slots = 100_000;
        let mut power = [0.0f64; 2];
        for _ in 0..slots {
            let s = sample_slot(&e, &c, &mut r).unwrap();
            for n in 0..16 {
                for m in 0..2 {
                    assert_eq!(s.cascaded[(n, m)], s.h[n].conj() * s.g[(n, m)]);
                    power[m] += s.g[(n, m)].norm_sqr();
                }
            }
        }
        let expected = e.sigma_area * 0.5;
        for p in power {
            let est = p / (slots as f64 * 16.0);
            assert!((est / expected - 1.0).abs() < 0.05, "{est} vs {expected}");
        }
    }

    #[test]
    fn cascaded_correlation_diagonal_is_one() {
        let e = env(2, 2, 0.25, 1, 0.5);
        let c = build_correlation(&e.geometry).unwrap();
        let stat = cascaded_correlation_stat(&e, &c, 100, &mut rng::stream(0, "t")).unwrap();
        for i in 0..4 {
            assert!((stat[(i, i)] - 1.0).abs() < 1e-12);
        }
        assert!(cascaded_correlation_stat(&e, &c, 1, &mut rng::stream(0, "t")).is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut e = env(2, 2, 0.25, 2, 0.5);
        assert!(e.validate().is_ok());
        e.mu_m = vec![0.5];
        assert!(e.validate().is_err());
        let mut e = env(2, 2, 0.25, 2, 0.5);
        e.noise_var = 0.0;
        assert!(e.validate().is_err());
        let mut e = env(2, 2, 0.25, 2, 0.5);
        e.slots = 0;
        assert!(e.validate().is_err());
    }
}
