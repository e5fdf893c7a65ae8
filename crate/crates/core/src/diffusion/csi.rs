use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CMatrix, C64};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// Real vectorisation `[Re(vec H); Im(vec H)]` of an `N×M` cascaded channel,
/// with `vec` stacking columns (antenna-major): `Re H[n,m]` sits at
/// `m·N + n` and `Im H[n,m]` at `NM + m·N + n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiVector(pub Vec<f64>);

impl CsiVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn energy(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// The `2M` values `[Re H[n,·], Im H[n,·]]` of element `n`.
    pub fn element_token(&self, elements: usize, antennas: usize, n: usize) -> Vec<f64> {
        let nm = elements * antennas;
        let mut tok = Vec::with_capacity(2 * antennas);
        for m in 0..antennas {
            tok.push(self.0[m * elements + n]);
        }
        for m in 0..antennas {
            tok.push(self.0[nm + m * elements + n]);
        }
        tok
    }

    pub fn set_element_token(&mut self, elements: usize, antennas: usize, n: usize, token: &[f64]) {
        let nm = elements * antennas;
        for m in 0..antennas {
            self.0[m * elements + n] = token[m];
            self.0[nm + m * elements + n] = token[antennas + m];
        }
    }
}

pub fn vectorize(h: &CMatrix) -> CsiVector {
    let (n, m) = h.shape();
    let mut x = vec![0.0; 2 * n * m];
    // nalgebra storage is column-major, matching vec(H)
    for (idx, z) in h.iter().enumerate() {
        x[idx] = z.re;
        x[n * m + idx] = z.im;
    }
    CsiVector(x)
}

pub fn devectorize(x: &CsiVector, elements: usize, antennas: usize) -> Result<CMatrix> {
    let nm = elements * antennas;
    if x.len() != 2 * nm {
        return Err(Error::Shape(format!(
            "CSI vector of length {} for N = {elements}, M = {antennas}",
            x.len()
        )));
    }
    Ok(CMatrix::from_iterator(
        elements,
        antennas,
        (0..nm).map(|i| C64::new(x.0[i], x.0[nm + i])),
    ))
}

/// Number of directly estimated elements, `N - round(ρN)`.
pub fn observed_count(elements: usize, rho: f64) -> usize {
    let masked = (rho.clamp(0.0, 1.0) * elements as f64).round() as usize;
    elements - masked.min(elements)
}

/// The set of RIS elements whose CSI is estimated directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPattern {
    observed: Vec<usize>,
    elements: usize,
}

impl MaskPattern {
    pub fn new(mut observed: Vec<usize>, elements: usize) -> Result<Self> {
        observed.sort_unstable();
        if observed.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("duplicate observed element".into()));
        }
        if observed.last().is_some_and(|&i| i >= elements) {
            return Err(Error::Domain(format!("observed element outside 0..{elements}")));
        }
        Ok(Self { observed, elements })
    }

    pub fn full(elements: usize) -> Self {
        Self {
            observed: (0..elements).collect(),
            elements,
        }
    }

    /// Uniformly random subset of `observed_count(N, ρ)` elements.
    pub fn random(elements: usize, rho: f64, rng: &mut impl Rng) -> Self {
        let count = observed_count(elements, rho);
        let mut observed = sample_indices(rng, elements, count).into_vec();
        observed.sort_unstable();
        Self { observed, elements }
    }

    /// Every `⌈1/(1-ρ)⌉`-th element, starting at 0.
    pub fn grid(elements: usize, rho: f64) -> Self {
        if rho >= 1.0 {
            return Self {
                observed: Vec::new(),
                elements,
            };
        }
        let step = (1.0 / (1.0 - rho.max(0.0))).ceil().max(1.0) as usize;
        Self {
            observed: (0..elements).step_by(step).collect(),
            elements,
        }
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    /// `ρ = 1 - N^p / N`.
    pub fn rho(&self) -> f64 {
        1.0 - self.observed.len() as f64 / self.elements as f64
    }

    pub fn indicator(&self) -> Vec<f64> {
        let mut ind = vec![0.0; self.elements];
        for &i in &self.observed {
            ind[i] = 1.0;
        }
        ind
    }
}

/// Partial CSI: one `2M`-wide token per observed element.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub elements: usize,
    pub antennas: usize,
    pub observed: Vec<usize>,
    /// Row-major `N^p × 2M`.
    pub tokens: Vec<f64>,
}

impl Condition {
    pub fn token(&self, j: usize) -> &[f64] {
        let w = 2 * self.antennas;
        &self.tokens[j * w..(j + 1) * w]
    }

    pub fn indicator(&self) -> Vec<f64> {
        let mut ind = vec![0.0; self.elements];
        for &i in &self.observed {
            ind[i] = 1.0;
        }
        ind
    }

    /// `N × 2M` row-major array with observed rows in place and zeros elsewhere.
    pub fn zero_filled(&self) -> Vec<f64> {
        let w = 2 * self.antennas;
        let mut out = vec![0.0; self.elements * w];
        for (j, &i) in self.observed.iter().enumerate() {
            out[i * w..(i + 1) * w].copy_from_slice(self.token(j));
        }
        out
    }

    pub fn rho(&self) -> f64 {
        1.0 - self.observed.len() as f64 / self.elements as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            tokens: self.tokens.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Vector with observed entries filled from the tokens and zeros elsewhere.
    pub fn to_partial_vector(&self) -> CsiVector {
        let mut x = CsiVector::zeros(2 * self.elements * self.antennas);
        for (j, &i) in self.observed.iter().enumerate() {
            x.set_element_token(self.elements, self.antennas, i, self.token(j));
        }
        x
    }
}

/// Partial estimation of the masked channel: observed rows plus circularly
/// symmetric Gaussian error of variance `est_noise_var` per complex entry.
pub fn extract_condition(
    x: &CsiVector,
    elements: usize,
    antennas: usize,
    mask: &MaskPattern,
    est_noise_var: f64,
    rng: &mut impl Rng,
) -> Result<Condition> {
    if x.len() != 2 * elements * antennas || mask.elements() != elements {
        return Err(Error::Shape("condition extraction shapes disagree".into()));
    }
    if !(est_noise_var >= 0.0) {
        return Err(Error::Domain(format!("estimation noise variance {est_noise_var}")));
    }
    let std = (est_noise_var / 2.0).sqrt();
    let mut tokens = Vec::with_capacity(mask.observed().len() * 2 * antennas);
    for &n in mask.observed() {
        let tok = x.element_token(elements, antennas, n);
        if est_noise_var > 0.0 {
            tokens.extend(tok.into_iter().map(|v| v + std * standard_normal(rng)));
        } else {
            tokens.extend(tok);
        }
    }
    Ok(Condition {
        elements,
        antennas,
        observed: mask.observed().to_vec(),
        tokens,
    })
}

/// `‖x̂ - x‖² / ‖x‖²`.
pub fn nmse(estimate: &CsiVector, truth: &CsiVector) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!("{} vs {}", estimate.len(), truth.len())));
    }
    let energy = truth.energy();
    if energy == 0.0 {
        return Err(Error::Domain("NMSE against an all-zero channel".into()));
    }
    let err: f64 = estimate.0.iter().zip(&truth.0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy)
}

/// Pooled NMSE over many slots, `Σ‖x̂ - x‖² / Σ‖x‖²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NmseAccumulator {
    error: f64,
    energy: f64,
    count: usize,
}

impl NmseAccumulator {
    pub fn add(&mut self, estimate: &CsiVector, truth: &CsiVector) {
        self.error += estimate.0.iter().zip(&truth.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.energy += truth.energy();
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn value(&self) -> Result<f64> {
        if self.energy == 0.0 {
            return Err(Error::Domain("NMSE over an all-zero set".into()));
        }
        Ok(self.error / self.energy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn layout_examples() {
        assert_eq!(vectorize(&CMatrix::zeros(3, 2)).0, vec![0.0; 12]);
        let h = CMatrix::from_element(1, 1, C64::new(3.0, 4.0));
        assert_eq!(vectorize(&h).0, vec![3.0, 4.0]);
        let h = CMatrix::from_row_slice(2, 2, &[
            C64::new(1.0, 5.0),
            C64::new(2.0, 6.0),
            C64::new(3.0, 7.0),
            C64::new(4.0, 8.0),
        ]);
        // column-major: H[0,0], H[1,0], H[0,1], H[1,1]
        assert_eq!(vectorize(&h).0, vec![1.0, 3.0, 2.0, 4.0, 5.0, 7.0, 6.0, 8.0]);
        assert_eq!(vectorize(&h).element_token(2, 2, 1), vec![3.0, 4.0, 7.0, 8.0]);
        assert!(devectorize(&CsiVector::zeros(7), 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn devectorize_inverts_vectorize(entries in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 8)) {
            let h = CMatrix::from_iterator(4, 2, entries.into_iter().map(|(a, b)| C64::new(a, b)));
            prop_assert_eq!(devectorize(&vectorize(&h), 4, 2).unwrap(), h);
        }

        #[test]
        fn element_tokens_round_trip(values in prop::collection::vec(-5.0f64..5.0, 24), n in 0usize..4) {
            let x = CsiVector(values);
            let tok = x.element_token(4, 3, n);
            let mut y = CsiVector::zeros(24);
            y.set_element_token(4, 3, n, &tok);
            prop_assert_eq!(y.element_token(4, 3, n), tok);
        }
    }

    #[test]
    fn masks() {
        let m = MaskPattern::grid(16, 0.5);
        assert_eq!(m.observed(), &[0, 2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(m.rho(), 0.5);
        assert_eq!(MaskPattern::grid(16, 1.0).observed().len(), 0);
        assert_eq!(MaskPattern::full(5).rho(), 0.0);
        let mut r = rng::stream(0, "t");
        let m = MaskPattern::random(16, 0.75, &mut r);
        assert_eq!(m.observed().len(), 4);
        assert!(m.observed().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(observed_count(16, 0.9), 2);
        assert!(MaskPattern::new(vec![1, 1], 4).is_err());
        assert!(MaskPattern::new(vec![4], 4).is_err());
        assert_eq!(MaskPattern::new(vec![3, 0], 4).unwrap().observed(), &[0, 3]);
    }

    #[test]
    fn noiseless_condition_copies_rows() {
        let x = CsiVector((0..16).map(|v| v as f64).collect());
        let mask = MaskPattern::new(vec![1, 3], 4).unwrap();
        let c = extract_condition(&x, 4, 2, &mask, 0.0, &mut rng::stream(0, "t")).unwrap();
        assert_eq!(c.token(0), x.element_token(4, 2, 1).as_slice());
        assert_eq!(c.token(1), x.element_token(4, 2, 3).as_slice());
        assert_eq!(c.indicator(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn fully_masked_condition_is_empty() {
        let x = CsiVector::zeros(16);
        let mask = MaskPattern::random(4, 1.0, &mut rng::stream(0, "t"));
        let c = extract_condition(&x, 4, 2, &mask, 0.1, &mut rng::stream(0, "t")).unwrap();
        assert!(c.tokens.is_empty());
        assert_eq!(c.indicator(), vec![0.0; 4]);
    }

    #[test]
    fn estimation_error_power_matches_requested_variance() {
        // 10 dB against unit-power complex entries
        let var = 0.1;
        let x = CsiVector::zeros(2 * 4 * 2);
        let mask = MaskPattern::full(4);
        let mut r = rng::stream(1, "t");
        let draws = 10_000;
        let mut power = 0.0;
        for _ in 0..draws {
            let c = extract_condition(&x, 4, 2, &mask, var, &mut r).unwrap();
            // per complex entry: re² + im²
            power += c.tokens.iter().map(|v| v * v).sum::<f64>() / 8.0;
        }
        let est = power / draws as f64;
        assert!((est / var - 1.0).abs() < 0.03, "{est}");
    }

    #[test]
    fn nmse_examples() {
        let x = CsiVector(vec![1.0, -2.0, 0.5]);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&CsiVector::zeros(3), &x).unwrap(), 1.0);
        assert!((nmse(&x.scaled(2.0), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&x, &CsiVector::zeros(3)).is_err());
        let mut acc = NmseAccumulator::default();
        acc.add(&CsiVector::zeros(3), &x);
        acc.add(&x, &x);
        assert!((acc.value().unwrap() - 0.5).abs() < 1e-15);
    }
}
