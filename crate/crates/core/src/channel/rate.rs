use super::{CMatrix, CVector, C64};
use crate::{Error, Result};

/// `‖φᵀ H‖²` with `φ_n = exp(j θ_n)`.
pub fn beam_gain(phases: &[f64], cascaded: &CMatrix) -> Result<f64> {
    Ok(effective_row(phases, cascaded)?.iter().map(|z| z.norm_sqr()).sum())
}

fn effective_row(phases: &[f64], cascaded: &CMatrix) -> Result<Vec<C64>> {
    if phases.len() != cascaded.nrows() {
        return Err(Error::Shape(format!(
            "{} phases for a channel with {} elements",
            phases.len(),
            cascaded.nrows()
        )));
    }
    if cascaded.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Domain("non-finite cascaded channel entry".into()));
    }
    let mut row = vec![C64::new(0.0, 0.0); cascaded.ncols()];
    for (n, &theta) in phases.iter().enumerate() {
        let phi = C64::from_polar(1.0, theta);
        for (m, acc) in row.iter_mut().enumerate() {
            *acc += phi * cascaded[(n, m)];
        }
    }
    Ok(row)
}

/// Achievable rate `log2(1 + P ‖φᵀH‖² / σ²)` under the MRT precoder.
pub fn mrt_rate(phases: &[f64], cascaded: &CMatrix, power: f64, noise_var: f64) -> Result<f64> {
    if !(power > 0.0 && noise_var > 0.0) {
        return Err(Error::Domain(format!("P = {power}, noise_var = {noise_var}")));
    }
    let gain = beam_gain(phases, cascaded)?;
    Ok((1.0 + power * gain / noise_var).log2())
}

/// The MRT precoder `f* = √P (φᵀH)ᴴ / ‖φᵀH‖`; `None` when the effective
/// channel vanishes.
pub fn mrt_precoder(phases: &[f64], cascaded: &CMatrix, power: f64) -> Result<Option<CVector>> {
    let row = effective_row(phases, cascaded)?;
    let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(None);
    }
    Ok(Some(CVector::from_iterator(
        row.len(),
        row.iter().map(|z| z.conj() * (power.sqrt() / norm)),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn zero_channel_gives_zero_rate() {
        let h = CMatrix::zeros(3, 2);
        assert_eq!(mrt_rate(&[0.1, 0.2, 0.3], &h, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_element_rate() {
        let h = CMatrix::from_element(1, 1, c(1.0, 0.0));
        for theta in [0.0, 1.0, -2.5] {
            assert!((mrt_rate(&[theta], &h, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn aligned_two_element_rate() {
        let h = CMatrix::from_row_slice(2, 1, &[c(1.0, 0.0), c(0.0, 1.0)]);
        let r = mrt_rate(&[0.0, -PI / 2.0], &h, 1.0, 1.0).unwrap();
        assert!((r - 5f64.log2()).abs() < 1e-12, "{r}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut h = CMatrix::from_element(2, 1, c(1.0, 0.0));
        assert!(mrt_rate(&[0.0], &h, 1.0, 1.0).is_err());
        assert!(mrt_rate(&[0.0, 0.0], &h, 0.0, 1.0).is_err());
        h[(1, 0)] = c(f64::NAN, 0.0);
        assert!(matches!(mrt_rate(&[0.0, 0.0], &h, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn precoder_achieves_the_closed_form_rate() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.5), c(-0.3, 0.2), c(0.1, -1.0), c(0.7, 0.7)]);
        let phases = [0.3, -1.1];
        let f = mrt_precoder(&phases, &h, 2.0).unwrap().unwrap();
        assert!((f.norm_squared() - 2.0).abs() < 1e-12);
        let row = effective_row(&phases, &h).unwrap();
        let y: C64 = row.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
        let rate = (1.0 + y.norm_sqr() / 0.5).log2();
        assert!((rate - mrt_rate(&phases, &h, 2.0, 0.5).unwrap()).abs() < 1e-12);
        assert!(mrt_precoder(&phases, &CMatrix::zeros(2, 2), 1.0).unwrap().is_none());
    }

    fn channel_strategy() -> impl Strategy<Value = (CMatrix, Vec<f64>)> {
        (1usize..6, 1usize..4).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), n * m),
                prop::collection::vec(-PI..PI, n),
            )
                .prop_map(move |(entries, phases)| {
                    let h = CMatrix::from_iterator(n, m, entries.into_iter().map(|(a, b)| c(a, b)));
                    (h, phases)
                })
        })
    }

    proptest! {
        #[test]
        fn rate_ignores_global_phase((h, phases) in channel_strategy(), shift in -10.0f64..10.0) {
            let base = mrt_rate(&phases, &h, 1.0, 0.1).unwrap();
            let shifted: Vec<f64> = phases.iter().map(|p| p + shift).collect();
            prop_assert!((mrt_rate(&shifted, &h, 1.0, 0.1).unwrap() - base).abs() < 1e-10);
        }

        #[test]
        fn rate_ignores_full_turns((h, phases) in channel_strategy(), which in 0usize..6) {
            let base = mrt_rate(&phases, &h, 1.0, 0.1).unwrap();
            let mut turned = phases.clone();
            let k = which % turned.len();
            turned[k] += 2.0 * PI;
            prop_assert!((mrt_rate(&turned, &h, 1.0, 0.1).unwrap() - base).abs() < 1e-10);
        }
    }
}
