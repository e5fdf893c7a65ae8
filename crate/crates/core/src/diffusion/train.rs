use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{extract_condition, forward_diffuse, ConditionBatch, CsiVector, MaskPattern, NoisePredictor, NoiseSchedule};
use crate::nn::{device, Mode, Optimizer};
use crate::rng::{normal_vec, WorkRng};
use crate::{Error, Result};

/// How diffusion steps are chosen for each training example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KSampling {
    /// One `k ~ U{1..K}` per example.
    #[default]
    Uniform,
    /// Every `k` in `1..=K` for every example.
    All,
}

/// A clean (normalised) channel with its observation pattern.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x0: CsiVector,
    pub mask: MaskPattern,
    /// Per complex entry, in normalised units.
    pub est_noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip: Option<f64>,
    pub k_sampling: KSampling,
    /// Mask ratios are drawn uniformly from this range per example.
    pub rho_min: f64,
    pub rho_max: f64,
    /// Probability of a noiseless observation.
    pub noiseless_prob: f64,
    /// Estimation SNR range in dB for the remaining examples.
    pub snr_db_min: f64,
    pub snr_db_max: f64,
}

impl Default for DmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 64,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            clip: Some(1.0),
            k_sampling: KSampling::Uniform,
            rho_min: 0.0,
            rho_max: 0.95,
            noiseless_prob: 0.25,
            snr_db_min: -5.0,
            snr_db_max: 30.0,
        }
    }
}

impl DmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("dm batch must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho_min) || !(self.rho_min..=1.0).contains(&self.rho_max) {
            return Err(Error::Config(format!("mask ratio range [{}, {}]", self.rho_min, self.rho_max)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("dm learning rate must be positive".into()));
        }
        if self.snr_db_min > self.snr_db_max {
            return Err(Error::Config("dm SNR range is empty".into()));
        }
        Ok(())
    }

    /// Draws a random observation setup for one normalised example. Unit
    /// variance per real entry means complex entries carry power 2.
    pub fn draw_example(&self, x0: CsiVector, elements: usize, rng: &mut impl Rng) -> TrainExample {
        let rho = rng.random_range(self.rho_min..=self.rho_max);
        let mask = MaskPattern::random(elements, rho, rng);
        let est_noise_var = if rng.random::<f64>() < self.noiseless_prob {
            0.0
        } else {
            let snr_db = rng.random_range(self.snr_db_min..=self.snr_db_max);
            2.0 / 10f64.powf(snr_db / 10.0)
        };
        TrainExample {
            x0,
            mask,
            est_noise_var,
        }
    }
}

/// Batch-mean `‖eps - eps_hat‖²` for the given examples.
pub fn dm_loss<P: NoisePredictor>(
    model: &P,
    examples: &[TrainExample],
    sched: &NoiseSchedule,
    sampling: KSampling,
    rng: &mut WorkRng,
    mode: &mut Mode<'_>,
) -> Result<Tensor> {
    if examples.is_empty() {
        return Err(Error::Shape("empty training batch".into()));
    }
    let (n, m) = (model.elements(), model.antennas());
    let dim = 2 * n * m;
    let mut conds = Vec::new();
    let mut xk = Vec::new();
    let mut eps_all = Vec::new();
    let mut steps = Vec::new();
    for ex in examples {
        if ex.x0.len() != dim {
            return Err(Error::Shape(format!("example of length {} for dimension {dim}", ex.x0.len())));
        }
        let cond = extract_condition(&ex.x0, n, m, &ex.mask, ex.est_noise_var, rng)?;
        let ks: Vec<usize> = match sampling {
            KSampling::Uniform => vec![rng.random_range(1..=sched.steps())],
            KSampling::All => (1..=sched.steps()).collect(),
        };
        for k in ks {
            let eps = normal_vec(rng, dim);
            xk.extend(forward_diffuse(ex.x0.as_slice(), k, &eps, sched)?);
            eps_all.extend(eps);
            steps.push(k);
            conds.push(cond.clone());
        }
    }
    let rows = steps.len();
    let cb = ConditionBatch::new(&conds, n, m)?;
    let xk = Tensor::from_vec(xk, (rows, dim), &device())?;
    let eps = Tensor::from_vec(eps_all, (rows, dim), &device())?;
    let pred = model.predict(&xk, &cb, &steps, mode)?;
    Ok(((pred - eps)?.sqr()?.sum_all()? / rows as f64)?)
}

/// One optimiser update; returns the loss before the update.
pub fn dm_train_step<P: NoisePredictor>(
    model: &P,
    opt: &mut Optimizer,
    examples: &[TrainExample],
    sched: &NoiseSchedule,
    sampling: KSampling,
    dropout: f64,
    rng: &mut WorkRng,
) -> Result<f64> {
    let mut drop_rng = crate::rng::fork(rng);
    let mut mode = Mode::Train {
        rng: &mut drop_rng,
        dropout,
    };
    let loss = dm_loss(model, examples, sched, sampling, rng, &mut mode)?;
    let value = loss.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::Training(format!("diffusion loss is {value}")));
    }
    opt.backward_step(&loss)?;
    Ok(value)
}

/// Trains on normalised channels, resampling masks and estimation noise for
/// every example. Returns the per-step loss history.
pub fn train_denoiser<P: NoisePredictor>(
    model: &P,
    data: &[CsiVector],
    sched: &NoiseSchedule,
    cfg: &DmTrainConfig,
    dropout: f64,
    rng: &mut WorkRng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Training("no training data".into()));
    }
    let store = model
        .store()
        .ok_or_else(|| Error::Training("model has no trainable parameters".into()))?;
    let mut opt = Optimizer::adamw(store.vars(), cfg.learning_rate, cfg.weight_decay, cfg.clip)?;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<TrainExample> = (0..cfg.batch)
            .map(|_| {
                let x0 = data[rng.random_range(0..data.len())].clone();
                cfg.draw_example(x0, model.elements(), rng)
            })
            .collect();
        let loss = dm_train_step(model, &mut opt, &batch, sched, cfg.k_sampling, dropout, rng)?;
        if step % 100 == 0 {
            log::debug!("dm step {step}: loss {loss:.4}");
        }
        history.push(loss);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_schedule, Denoiser, DenoiserConfig};
    use crate::rng::{self, stream};

    /// Recovers eps exactly from x_k, given the clean x0 of each row.
    struct Oracle {
        x0: Vec<Vec<f64>>,
        sched: NoiseSchedule,
        repeats: usize,
    }

    impl NoisePredictor for Oracle {
        fn elements(&self) -> usize {
            4
        }
        fn antennas(&self) -> usize {
            1
        }
        fn predict(&self, x_k: &Tensor, _: &ConditionBatch, steps: &[usize], _: &mut Mode<'_>) -> Result<Tensor> {
            let rows: Vec<Vec<f64>> = x_k.to_vec2()?;
            let mut out = Vec::new();
            for (r, (row, &k)) in rows.iter().zip(steps).enumerate() {
                let x0 = &self.x0[r / self.repeats];
                let ab = self.sched.alpha_bar(k);
                out.extend(row.iter().zip(x0).map(|(x, c)| (x - ab.sqrt() * c) / (1.0 - ab).sqrt()));
            }
            Ok(Tensor::from_vec(out, x_k.dims(), &device())?)
        }
    }

    struct Zero;

    impl NoisePredictor for Zero {
        fn elements(&self) -> usize {
            16
        }
        fn antennas(&self) -> usize {
            2
        }
        fn predict(&self, x_k: &Tensor, _: &ConditionBatch, _: &[usize], _: &mut Mode<'_>) -> Result<Tensor> {
            Ok(x_k.zeros_like()?)
        }
    }

    fn examples(n: usize, dim: usize, count: usize, r: &mut WorkRng) -> Vec<TrainExample> {
        (0..count)
            .map(|_| TrainExample {
                x0: CsiVector(normal_vec(r, dim)),
                mask: MaskPattern::random(n, 0.5, r),
                est_noise_var: 0.0,
            })
            .collect()
    }

    #[test]
    fn oracle_model_has_zero_loss() {
        let sched = build_schedule(20, 1e-4, 0.02).unwrap();
        let mut r = stream(0, "t");
        let ex = examples(4, 8, 5, &mut r);
        for (sampling, repeats) in [(KSampling::Uniform, 1), (KSampling::All, 20)] {
            let oracle = Oracle {
                x0: ex.iter().map(|e| e.x0.0.clone()).collect(),
                sched: sched.clone(),
                repeats,
            };
            let loss = dm_loss(&oracle, &ex, &sched, sampling, &mut r, &mut Mode::Eval).unwrap();
            assert!(loss.to_scalar::<f64>().unwrap().abs() < 1e-18);
        }
    }

    #[test]
    fn zero_model_loss_is_dimension() {
        let sched = build_schedule(100, 1e-4, 0.02).unwrap();
        let mut r = stream(1, "t");
        let ex = examples(16, 64, 400, &mut r);
        let loss = dm_loss(&Zero, &ex, &sched, KSampling::Uniform, &mut r, &mut Mode::Eval)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        // chi-square with 64 * 400 degrees of freedom, normalised: sd = sqrt(2 * 64 / 400)
        assert!((loss - 64.0).abs() < 4.0 * (128.0f64 / 400.0).sqrt(), "{loss}");
    }

    #[test]
    fn training_reduces_loss_on_fixed_set() {
        let sched = build_schedule(100, 1e-4, 0.02).unwrap();
        let mut r = stream(2, "t");
        let cfg = DenoiserConfig {
            width: 32,
            layers: 1,
            ..DenoiserConfig::desk(4, 1)
        };
        let model = Denoiser::new(cfg, &mut rng::stream(2, "init")).unwrap();
        // strongly structured toy data: every element carries the same value
        let data: Vec<CsiVector> = (0..256)
            .map(|_| {
                let (a, b) = (rng::standard_normal(&mut r), rng::standard_normal(&mut r));
                CsiVector(vec![a, a, a, a, b, b, b, b])
            })
            .collect();
        let tc = DmTrainConfig {
            steps: 500,
            batch: 32,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let hist = train_denoiser(&model, &data, &sched, &tc, 0.0, &mut r).unwrap();
        let head: f64 = hist[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = hist[hist.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }

    #[test]
    fn rejects_empty_batch_and_missing_params() {
        let sched = build_schedule(10, 1e-4, 0.02).unwrap();
        let mut r = stream(3, "t");
        assert!(dm_loss(&Zero, &[], &sched, KSampling::Uniform, &mut r, &mut Mode::Eval).is_err());
        let data = vec![CsiVector::zeros(64)];
        assert!(matches!(
            train_denoiser(&Zero, &data, &sched, &DmTrainConfig::default(), 0.0, &mut r),
            Err(Error::Training(_))
        ));
    }
}
