use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters from which a [`NoiseSchedule`] is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub b_first: f64,
    pub b_last: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            b_first: 1e-4,
            b_last: 0.02,
        }
    }
}

/// Linear variance schedule `b_1..b_K` and the running products
/// `ā_k = Π_{i≤k} (1 - b_i)`. Step indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn build_schedule(steps: usize, b_first: f64, b_last: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Domain("schedule needs K >= 1".into()));
    }
    if !(b_first > 0.0 && b_first <= b_last && b_last < 1.0) {
        return Err(Error::Domain(format!(
            "need 0 < b_first <= b_last < 1, got {b_first} and {b_last}"
        )));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![b_first]
    } else {
        (0..steps)
            .map(|i| b_first + (b_last - b_first) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule {
        spec: ScheduleSpec {
            steps,
            b_first,
            b_last,
        },
        betas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        build_schedule(spec.steps, spec.b_first, spec.b_last)
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Domain(format!("diffusion step {k} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `b_k`, 1-based.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    /// `ā_k` with `ā_0 = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    /// Variance of the reverse-step noise, `(1 - ā_{k-1}) / (1 - ā_k) · b_k`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k)) * self.beta(k)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}
