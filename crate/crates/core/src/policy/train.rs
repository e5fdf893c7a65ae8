use candle_core::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{DecisionTransformer, DtInputs, HEAD_PREFIX};
use super::ReplayBuffer;
use crate::diffusion::CsiVector;
use crate::nn::{device, Mode, Optimizer};
use crate::rng::{fork, WorkRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtTrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip: Option<f64>,
    /// Supervise only the last position of each window.
    pub final_only: bool,
    /// Probability of replacing a window's tag with the unknown tag 0.
    pub tag_dropout: f64,
}

impl Default for DtTrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            batch: 64,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            clip: Some(1.0),
            final_only: false,
            tag_dropout: 0.1,
        }
    }
}

/// `(episode, start)` pairs selecting fixed-length windows.
pub type WindowIndex = (usize, usize);

/// Builds model inputs and expert targets for the given windows.
pub fn window_batch(buffer: &ReplayBuffer, len: usize, picks: &[WindowIndex]) -> Result<(DtInputs, Vec<f64>)> {
    let ad = 2 * buffer.elements;
    let mut inputs = DtInputs::new(picks.len(), len);
    let mut targets = Vec::with_capacity(picks.len() * len * ad);
    for &(e, start) in picks {
        let ep = buffer
            .episodes
            .get(e)
            .ok_or_else(|| Error::Shape(format!("episode {e} outside the buffer")))?;
        let t = &ep.trajectory;
        if start + len > t.len() {
            return Err(Error::Shape(format!("window {start}+{len} beyond episode of {}", t.len())));
        }
        let states: Vec<&CsiVector> = t.states[start..start + len].iter().collect();
        let actions: Vec<&[f64]> = t.actions[start..start + len].iter().map(Vec::as_slice).collect();
        inputs.push(ep.tag, &t.returns_to_go[start..start + len], &states, &actions, start, ad);
        for a in &actions {
            targets.extend_from_slice(a);
        }
    }
    Ok((inputs, targets))
}

/// Mean squared error between predicted and expert pairs.
pub fn dt_loss(model: &DecisionTransformer, inputs: &DtInputs, targets: &[f64], final_only: bool, mode: &mut Mode<'_>) -> Result<Tensor> {
    let ad = model.config().action_dim();
    let (b, l) = (inputs.batch, inputs.len);
    let pred = model.forward(inputs, mode)?;
    let target = Tensor::from_vec(targets.to_vec(), (b, l, ad), &device())?;
    let diff = (pred - target)?;
    let diff = if final_only { diff.narrow(1, l - 1, 1)? } else { diff };
    Ok(diff.sqr()?.mean_all()?)
}

/// Called as `(completed_steps, model)` every `every` steps.
pub type Checkpoint<'a> = (usize, &'a mut dyn FnMut(usize, &DecisionTransformer) -> Result<()>);

fn run(
    model: &DecisionTransformer,
    buffer: &ReplayBuffer,
    vars: Vec<Var>,
    cfg: &DtTrainConfig,
    steps: usize,
    rng: &mut WorkRng,
    mut checkpoint: Option<Checkpoint<'_>>,
) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::Training("empty trajectory buffer".into()));
    }
    let mc = model.config();
    if buffer.elements != mc.elements || buffer.antennas != mc.antennas {
        return Err(Error::Shape("buffer and model disagree on N or M".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("dt batch must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.tag_dropout) {
        return Err(Error::Config("tag dropout must lie in [0, 1]".into()));
    }
    let len = mc.window.min(buffer.slots);
    let mut opt = Optimizer::adamw(vars, cfg.learning_rate, cfg.weight_decay, cfg.clip)?;
    let mut history = Vec::with_capacity(steps);
    for it in 0..steps {
        let picks: Vec<WindowIndex> = (0..cfg.batch)
            .map(|_| (rng.random_range(0..buffer.len()), rng.random_range(0..=buffer.slots - len)))
            .collect();
        let (mut inputs, targets) = window_batch(buffer, len, &picks)?;
        for tag in &mut inputs.tags {
            if rng.random::<f64>() < cfg.tag_dropout {
                *tag = 0;
            }
        }
        let mut drop_rng = fork(rng);
        let mut mode = Mode::Train {
            rng: &mut drop_rng,
            dropout: mc.dropout,
        };
        let loss = dt_loss(model, &inputs, &targets, cfg.final_only, &mut mode)?;
        let value = loss.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::Training(format!("action loss is {value} at iteration {it}")));
        }
        opt.backward_step(&loss)?;
        if it % 200 == 0 {
            log::debug!("dt iteration {it}: loss {value:.5}");
        }
        history.push(value);
        if let Some((every, f)) = checkpoint.as_mut() {
            if (it + 1) % (*every).max(1) == 0 {
                f(it + 1, model)?;
            }
        }
    }
    Ok(history)
}

/// Behaviour cloning of the buffer's actions over all parameters.
pub fn dt_train(model: &mut DecisionTransformer, buffer: &ReplayBuffer, cfg: &DtTrainConfig, seed: u64, rng: &mut WorkRng) -> Result<Vec<f64>> {
    let history = run(model, buffer, model.params().vars(), cfg, cfg.iters, rng, None)?;
    model.training.iterations += history.len();
    model.training.seed = seed;
    if let Some(&last) = history.last() {
        model.training.final_loss = Some(last);
    }
    Ok(history)
}

/// Trains only the action head; every other array is left untouched.
pub fn fine_tune(model: &mut DecisionTransformer, buffer: &ReplayBuffer, steps: usize, cfg: &DtTrainConfig, rng: &mut WorkRng) -> Result<Vec<f64>> {
    fine_tune_with(model, buffer, steps, cfg, rng, None)
}

/// [`fine_tune`] with a periodic checkpoint hook.
pub fn fine_tune_with(
    model: &mut DecisionTransformer,
    buffer: &ReplayBuffer,
    steps: usize,
    cfg: &DtTrainConfig,
    rng: &mut WorkRng,
    checkpoint: Option<Checkpoint<'_>>,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    let head = model.params().vars_with_prefix(&[HEAD_PREFIX]);
    let history = run(model, buffer, head, cfg, steps, rng, checkpoint)?;
    model.training.fine_tune_steps += history.len();
    Ok(history)
}
