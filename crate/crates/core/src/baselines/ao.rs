use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{mrt_rate, CMatrix, C64};
use crate::policy::canonicalize_phases;
use crate::rng::stream;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    pub sweeps: usize,
    /// Stop once a sweep improves the objective by less than this fraction.
    pub tol: f64,
    /// Starts in total: the singular-vector start plus random ones.
    pub restarts: usize,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            sweeps: 100,
            tol: 1e-12,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoResult {
    /// Normalised so element 0 has phase 0.
    pub phases: Vec<f64>,
    pub rate: f64,
    /// `‖φᵀH‖²`.
    pub objective: f64,
}

fn objective_of(sum: &[C64]) -> f64 {
    sum.iter().map(|z| z.norm_sqr()).sum()
}

/// Dominant right singular direction of `H`, by power iteration on `HᴴH`.
fn dominant_direction(h: &CMatrix) -> Vec<C64> {
    let gram = h.adjoint() * h;
    let m = gram.nrows();
    let mut w = nalgebra::DVector::from_element(m, C64::new(1.0, 0.0));
    for _ in 0..200 {
        let next = &gram * &w;
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        w = next / C64::new(norm, 0.0);
    }
    w.iter().copied().collect()
}

/// Coordinate ascent from `phases`. `trace` receives the objective after
/// every single-coordinate update.
fn ascend(h: &CMatrix, phases: &mut [f64], cfg: &AoConfig, mut trace: Option<&mut Vec<f64>>) -> f64 {
    let (n, m) = h.shape();
    let mut sum = vec![C64::new(0.0, 0.0); m];
    for (i, &t) in phases.iter().enumerate() {
        let phi = C64::from_polar(1.0, t);
        for (k, s) in sum.iter_mut().enumerate() {
            *s += phi * h[(i, k)];
        }
    }
    let mut best = objective_of(&sum);
    for _ in 0..cfg.sweeps {
        let start = best;
        for i in 0..n {
            let phi = C64::from_polar(1.0, phases[i]);
            // residual v without element i, and H_i vᴴ
            let mut inner = C64::new(0.0, 0.0);
            for k in 0..m {
                let v = sum[k] - phi * h[(i, k)];
                inner += h[(i, k)] * v.conj();
            }
            if inner.norm_sqr() > 0.0 {
                let theta = -inner.arg();
                let new_phi = C64::from_polar(1.0, theta);
                let moved: Vec<C64> = sum.iter().enumerate().map(|(k, s)| s + (new_phi - phi) * h[(i, k)]).collect();
                // the optimal phase can lose an ulp to rounding; keep the old one then
                let obj = objective_of(&moved);
                if obj >= best {
                    sum = moved;
                    phases[i] = theta;
                    best = obj;
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(best);
            }
        }
        if best - start <= cfg.tol * start.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    best
}

fn starts(h: &CMatrix, cfg: &AoConfig) -> Vec<Vec<f64>> {
    let n = h.nrows();
    let w = dominant_direction(h);
    let aligned: Vec<f64> = (0..n)
        .map(|i| {
            let z: C64 = (0..h.ncols()).map(|k| h[(i, k)] * w[k]).sum();
            -z.arg()
        })
        .collect();
    let mut out = vec![aligned];
    let mut rng = stream(0, "ao-restart");
    for _ in 1..cfg.restarts.max(1) {
        out.push((0..n).map(|_| rng.random_range(-PI..PI)).collect());
    }
    out
}

/// Near-optimal phases for `max ‖φᵀH‖²` under unit modulus.
pub fn ao_optimize(h: &CMatrix, power: f64, noise_var: f64, cfg: &AoConfig) -> Result<AoResult> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mut phases in starts(h, cfg) {
        let obj = ascend(h, &mut phases, cfg, None);
        if best.as_ref().is_none_or(|(b, _)| obj > *b) {
            best = Some((obj, phases));
        }
    }
    let (objective, phases) = best.expect("at least one start");
    let phases = canonicalize_phases(&phases);
    let rate = mrt_rate(&phases, h, power, noise_var)?;
    Ok(AoResult {
        phases,
        rate,
        objective,
    })
}

/// Single-start run from `init` recording the objective after every
/// coordinate update.
pub fn ao_trace(h: &CMatrix, init: &[f64], cfg: &AoConfig) -> (Vec<f64>, Vec<f64>) {
    let mut phases = init.to_vec();
    let mut trace = Vec::new();
    ascend(h, &mut phases, cfg, Some(&mut trace));
    (phases, trace)
}
