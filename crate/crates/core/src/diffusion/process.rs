use rand::Rng;

use super::NoiseSchedule;
use crate::rng::standard_normal;
use crate::{Error, Result};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vector lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Closed-form marginal `x_k = sqrt(ā_k) x_0 + sqrt(1 - ā_k) eps`.
pub fn forward_diffuse(x0: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(k)?;
    same_len(x0, eps)?;
    let ab = sched.alpha_bar(k);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Single transition `x_k = sqrt(1 - b_k) x_{k-1} + sqrt(b_k) eps`.
pub fn forward_step(x_prev: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(k)?;
    same_len(x_prev, eps)?;
    let b = sched.beta(k);
    let (a, s) = ((1.0 - b).sqrt(), b.sqrt());
    Ok(x_prev.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Ancestral step with caller-supplied noise `z`; `z` is ignored at `k = 1`.
pub fn reverse_step_with_noise(
    x_k: &[f64],
    eps_hat: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    z: &[f64],
) -> Result<Vec<f64>> {
    sched.check_step(k)?;
    same_len(x_k, eps_hat)?;
    let b = sched.beta(k);
    let inv = 1.0 / (1.0 - b).sqrt();
    let coef = b / (1.0 - sched.alpha_bar(k)).sqrt();
    let mut out: Vec<f64> = x_k.iter().zip(eps_hat).map(|(x, e)| inv * (x - coef * e)).collect();
    if k > 1 {
        same_len(x_k, z)?;
        let std = sched.posterior_variance(k).sqrt();
        for (o, zi) in out.iter_mut().zip(z) {
            *o += std * zi;
        }
    }
    Ok(out)
}

/// `x_{k-1} = (x_k - b_k / sqrt(1 - ā_k) eps_hat) / sqrt(1 - b_k) + sqrt(Σ_k) z`.
pub fn reverse_step(
    x_k: &[f64],
    eps_hat: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let z: Vec<f64> = if k > 1 {
        (0..x_k.len()).map(|_| standard_normal(rng)).collect()
    } else {
        Vec::new()
    };
    reverse_step_with_noise(x_k, eps_hat, k, sched, &z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_schedule;
    use crate::rng::{self, normal_vec};

    fn sched() -> NoiseSchedule {
        build_schedule(100, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn forward_edge_cases() {
        let s = sched();
        let x0 = vec![1.0, -2.0, 3.0];
        let ab = s.alpha_bar(40);
        let y = forward_diffuse(&x0, 40, &[0.0; 3], &s).unwrap();
        for (a, b) in y.iter().zip(&x0) {
            assert_eq!(*a, ab.sqrt() * b);
        }
        let eps = vec![0.5, 0.1, -1.0];
        let y = forward_diffuse(&[0.0; 3], 40, &eps, &s).unwrap();
        for (a, b) in y.iter().zip(&eps) {
            assert_eq!(*a, (1.0 - ab).sqrt() * b);
        }
        assert!(forward_diffuse(&x0, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 101, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 1, &[0.0], &s).is_err());
        assert!(reverse_step(&x0, &eps, 0, &s, &mut rng::stream(0, "t")).is_err());
    }

    #[test]
    fn first_step_inverts_exactly() {
        let s = sched();
        let mut r = rng::stream(3, "t");
        let x0 = normal_vec(&mut r, 64);
        let eps = normal_vec(&mut r, 64);
        let x1 = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        let back = reverse_step(&x1, &eps, 1, &s, &mut r).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_noise_reverse_is_rescale() {
        let s = sched();
        let x = vec![1.0, 2.0];
        let out = reverse_step_with_noise(&x, &[0.0, 0.0], 50, &s, &[0.0, 0.0]).unwrap();
        let f = 1.0 / (1.0 - s.beta(50)).sqrt();
        assert_eq!(out, vec![f, 2.0 * f]);
    }

    #[test]
    fn composed_steps_match_marginal_variance() {
        let s = sched();
        let k = 60;
        let trials = 10_000;
        let mut r = rng::stream(5, "t");
        let var_x0: f64 = 4.0;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..trials {
            let mut x = vec![var_x0.sqrt() * crate::rng::standard_normal(&mut r)];
            for j in 1..=k {
                x = forward_step(&x, j, &normal_vec(&mut r, 1), &s).unwrap();
            }
            sum += x[0];
            sq += x[0] * x[0];
        }
        let mean = sum / trials as f64;
        let var = sq / trials as f64 - mean * mean;
        let ab = s.alpha_bar(k);
        let expected = ab * var_x0 + 1.0 - ab;
        assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
    }

    #[test]
    fn injected_noise_has_posterior_variance() {
        let s = sched();
        let k = 30;
        let mut r = rng::stream(6, "t");
        let trials = 10_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..trials {
            let y = reverse_step(&[0.3], &[0.1], k, &s, &mut r).unwrap()[0];
            sum += y;
            sq += y * y;
        }
        let mean = sum / trials as f64;
        let var = sq / trials as f64 - mean * mean;
        let expected = s.posterior_variance(k);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}
