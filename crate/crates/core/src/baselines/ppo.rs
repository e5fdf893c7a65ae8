use std::f64::consts::PI;
use std::time::{Duration, Instant};

use candle_core::{Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BeamEnv, StateView};
use crate::diffusion::CsiVector;
use crate::nn::{device, Linear, Optimizer, ParamStore};
use crate::policy::normalize_state;
use crate::rng::{standard_normal, WorkRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    /// Environment steps collected per update, across all parallel envs.
    pub rollout: usize,
    pub envs: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub value_weight: f64,
    pub entropy_weight: f64,
    pub learning_rate: f64,
    pub hidden: usize,
    pub total_steps: usize,
    /// Stops after the update during which this budget ran out.
    #[serde(default)]
    pub time_budget: Option<Duration>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout: 2048,
            envs: 8,
            epochs: 4,
            minibatch: 256,
            clip: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            value_weight: 0.5,
            entropy_weight: 0.0,
            learning_rate: 3e-4,
            hidden: 128,
            total_steps: 8192,
            time_budget: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(s.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("ppo clip ratio must lie in (0, 1)");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("ppo discount must lie in (0, 1]");
        }
        if self.envs == 0 || self.rollout < self.envs || self.minibatch == 0 || self.epochs == 0 {
            return bad("ppo needs envs >= 1, rollout >= envs, minibatch >= 1, epochs >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("ppo learning rate must be positive");
        }
        Ok(())
    }
}

/// Gaussian policy over the `2N` pair representation plus a value head.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    store: ParamStore,
    pi: [Linear; 3],
    v: [Linear; 3],
    log_std: Tensor,
    action_dim: usize,
}

impl PpoPolicy {
    pub fn new(state_dim: usize, elements: usize, hidden: usize, rng: &mut WorkRng) -> Result<Self> {
        let mut s = ParamStore::new();
        let ad = 2 * elements;
        let pi = [
            Linear::new(&mut s, "pi.0", state_dim, hidden, rng)?,
            Linear::new(&mut s, "pi.1", hidden, hidden, rng)?,
            Linear::new(&mut s, "pi.2", hidden, ad, rng)?,
        ];
        let v = [
            Linear::new(&mut s, "v.0", state_dim, hidden, rng)?,
            Linear::new(&mut s, "v.1", hidden, hidden, rng)?,
            Linear::new(&mut s, "v.2", hidden, 1, rng)?,
        ];
        let log_std = s.constant("pi.log_std", &[ad], -0.5)?;
        Ok(Self {
            store: s,
            pi,
            v,
            log_std,
            action_dim: ad,
        })
    }

    fn mlp(layers: &[Linear; 3], x: &Tensor) -> Result<Tensor> {
        let h = layers[0].forward(x)?.tanh()?;
        let h = layers[1].forward(&h)?.tanh()?;
        layers[2].forward(&h)
    }

    fn states_tensor(states: &[Vec<f64>]) -> Result<Tensor> {
        let dim = states.first().map_or(0, Vec::len);
        let flat: Vec<f64> = states.iter().flatten().copied().collect();
        Ok(Tensor::from_vec(flat, (states.len(), dim), &device())?)
    }

    /// Mean action pairs for (already normalised) states.
    pub fn mean(&self, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(Self::mlp(&self.pi, &Self::states_tensor(states)?)?.to_vec2()?)
    }

    /// Deterministic phases for raw states.
    pub fn phases(&self, states: &[CsiVector]) -> Result<Vec<Vec<f64>>> {
        let normed: Vec<Vec<f64>> = states.iter().map(|s| normalize_state(s.as_slice())).collect();
        Ok(self.mean(&normed)?.iter().map(|u| pairs_to_phases(u)).collect())
    }

    fn value(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Self::mlp(&self.v, x)?.squeeze(1)?)
    }

    /// Log-density of `u` under the current Gaussian, per row.
    fn log_prob(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let mean = Self::mlp(&self.pi, x)?;
        let std = self.log_std.exp()?;
        let z = u.sub(&mean)?.broadcast_div(&std)?;
        let quad = (z.sqr()?.sum(D::Minus1)? * -0.5)?;
        let norm = self.log_std.sum_all()? + 0.5 * self.action_dim as f64 * (2.0 * PI).ln();
        Ok(quad.broadcast_sub(&norm?)?)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }
}

/// Phase per element from an unnormalised pair vector.
pub fn pairs_to_phases(u: &[f64]) -> Vec<f64> {
    u.chunks_exact(2).map(|p| p[1].atan2(p[0])).collect()
}

#[derive(Debug, Clone)]
pub struct PpoOutcome {
    pub policy: PpoPolicy,
    /// Mean per-slot rate over each update's rollout.
    pub curve: Vec<f64>,
    pub env_steps: usize,
}

/// Clipped-surrogate PPO on parallel copies of `env`. Episodes are numbered
/// from `episode_base` upwards.
pub fn ppo_train(env: &BeamEnv, view: &mut dyn StateView, cfg: &PpoConfig, episode_base: u64, rng: &mut WorkRng) -> Result<PpoOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let n = env.config().elements();
    let state_dim = 2 * n * env.config().antennas;
    let policy = PpoPolicy::new(state_dim, n, cfg.hidden, rng)?;
    let mut opt = Optimizer::adamw(policy.store.vars(), cfg.learning_rate, 0.0, Some(0.5))?;
    let mut next_episode = episode_base;
    let mut envs: Vec<BeamEnv> = Vec::with_capacity(cfg.envs);
    for _ in 0..cfg.envs {
        let mut e = env.clone();
        e.reset(next_episode)?;
        next_episode += 1;
        envs.push(e);
    }
    let observe = |envs: &[BeamEnv], view: &mut dyn StateView| -> Result<Vec<Vec<f64>>> {
        let hs: Vec<_> = envs.iter().map(|e| &e.channel().cascaded).collect();
        Ok(view.observe(&hs)?.iter().map(|s| normalize_state(s.as_slice())).collect())
    };
    let mut obs = observe(&envs, view)?;
    let per_env = cfg.rollout / cfg.envs;
    let mut curve = Vec::new();
    let mut steps = 0;
    let std_now = |p: &PpoPolicy| -> Result<Vec<f64>> { Ok(p.log_std.exp()?.to_vec1()?) };

    while steps < cfg.total_steps {
        let mut states = Vec::with_capacity(per_env * cfg.envs);
        let mut actions = Vec::with_capacity(per_env * cfg.envs);
        let mut old_logp = Vec::new();
        let mut values = Vec::new();
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        let std = std_now(&policy)?;
        for _ in 0..per_env {
            let x = PpoPolicy::states_tensor(&obs)?;
            let means: Vec<Vec<f64>> = PpoPolicy::mlp(&policy.pi, &x)?.to_vec2()?;
            let vals: Vec<f64> = policy.value(&x)?.to_vec1()?;
            let mut us = Vec::with_capacity(cfg.envs);
            for (e, mean) in envs.iter_mut().zip(&means) {
                let u: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + s * standard_normal(rng)).collect();
                let step = e.step(&pairs_to_phases(&u))?;
                rewards.push(step.reward);
                dones.push(step.done);
                if step.done {
                    e.reset(next_episode)?;
                    next_episode += 1;
                }
                us.push(u);
            }
            let ut = PpoPolicy::states_tensor(&us)?;
            old_logp.extend(policy.log_prob(&x, &ut)?.to_vec1::<f64>()?);
            values.extend(vals);
            states.extend(obs);
            actions.extend(us);
            obs = observe(&envs, view)?;
        }
        let last_values: Vec<f64> = policy.value(&PpoPolicy::states_tensor(&obs)?)?.to_vec1()?;
        let rows = states.len();
        steps += rows;

        // GAE per env; row index = t * envs + e
        let mut adv = vec![0.0; rows];
        for e in 0..cfg.envs {
            let mut gae = 0.0;
            for t in (0..per_env).rev() {
                let i = t * cfg.envs + e;
                let next_v = if dones[i] {
                    0.0
                } else if t + 1 < per_env {
                    values[i + cfg.envs]
                } else {
                    last_values[e]
                };
                let not_done = if dones[i] { 0.0 } else { 1.0 };
                let delta = rewards[i] + cfg.discount * next_v - values[i];
                gae = delta + cfg.discount * cfg.gae_lambda * not_done * gae;
                adv[i] = gae;
            }
        }
        let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
        let mean_adv = adv.iter().sum::<f64>() / rows as f64;
        let std_adv = (adv.iter().map(|a| (a - mean_adv).powi(2)).sum::<f64>() / rows as f64).sqrt() + 1e-8;
        let adv: Vec<f64> = adv.iter().map(|a| (a - mean_adv) / std_adv).collect();

        let mut order: Vec<usize> = (0..rows).collect();
        for _ in 0..cfg.epochs {
            for i in (1..rows).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            for chunk in order.chunks(cfg.minibatch) {
                let pick = |src: &[Vec<f64>]| PpoPolicy::states_tensor(&chunk.iter().map(|&i| src[i].clone()).collect::<Vec<_>>());
                let col = |src: &[f64]| Tensor::from_vec(chunk.iter().map(|&i| src[i]).collect::<Vec<_>>(), chunk.len(), &device());
                let x = pick(&states)?;
                let u = pick(&actions)?;
                let logp = policy.log_prob(&x, &u)?;
                let ratio = (logp - col(&old_logp)?)?.exp()?;
                let a = col(&adv)?;
                let unclipped = (&ratio * &a)?;
                let clipped = (ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip)? * &a)?;
                let surrogate = unclipped.minimum(&clipped)?.mean_all()?;
                let value_loss = (policy.value(&x)? - col(&returns)?)?.sqr()?.mean_all()?;
                let entropy = policy.log_std.sum_all()?;
                let loss = ((surrogate.neg()? + (value_loss * cfg.value_weight)?)? - (entropy * cfg.entropy_weight)?)?;
                let value = loss.to_scalar::<f64>()?;
                if !value.is_finite() {
                    return Err(Error::Training(format!("ppo loss is {value}")));
                }
                opt.backward_step(&loss)?;
            }
        }
        curve.push(rewards.iter().sum::<f64>() / rows as f64);
        log::debug!("ppo update {}: mean rate {:.4}", curve.len(), curve.last().unwrap());
        if cfg.time_budget.is_some_and(|b| started.elapsed() >= b) {
            break;
        }
    }
    Ok(PpoOutcome {
        policy,
        curve,
        env_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::PerfectView;
    use crate::channel::{build_correlation, EnvConfig, RisGeometry};
    use crate::rng::stream;
    use std::sync::Arc;

    fn env() -> BeamEnv {
        let geometry = RisGeometry::with_spacing_ratio(2, 2, 0.25, 0.1).unwrap();
        let corr = Arc::new(build_correlation(&geometry).unwrap());
        let cfg = EnvConfig {
            name: "p".into(),
            sigma_area: geometry.element_area(),
            geometry,
            antennas: 1,
            mu_m: vec![0.5],
            mu_0: 0.5,
            power: 1.0,
            noise_var: 1e-8,
            slots: 10,
            seed: 1,
            correlation: Default::default(),
        };
        BeamEnv::new(cfg, corr, 0).unwrap()
    }

    fn cfg() -> PpoConfig {
        PpoConfig {
            rollout: 64,
            envs: 4,
            minibatch: 32,
            hidden: 16,
            total_steps: 256,
            ..Default::default()
        }
    }

    #[test]
    fn curve_has_one_entry_per_update_and_is_reproducible() {
        let e = env();
        let a = ppo_train(&e, &mut PerfectView, &cfg(), 100, &mut stream(0, "ppo")).unwrap();
        assert_eq!(a.curve.len(), 4);
        assert_eq!(a.env_steps, 256);
        let b = ppo_train(&e, &mut PerfectView, &cfg(), 100, &mut stream(0, "ppo")).unwrap();
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.clip = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.discount = 0.0;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let p = PpoPolicy::new(3, 1, 4, &mut stream(0, "i")).unwrap();
        let x = Tensor::from_vec(vec![0.1, 0.2, 0.3], (1, 3), &device()).unwrap();
        let mean = p.mean(&[vec![0.1, 0.2, 0.3]]).unwrap()[0].clone();
        let u = vec![mean[0] + 0.3, mean[1] - 0.1];
        let ut = Tensor::from_vec(u.clone(), (1, 2), &device()).unwrap();
        let lp = p.log_prob(&x, &ut).unwrap().to_vec1::<f64>().unwrap()[0];
        let s = (-0.5f64).exp();
        let direct: f64 = u
            .iter()
            .zip(&mean)
            .map(|(a, m)| -0.5 * ((a - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln())
            .sum();
        assert!((lp - direct).abs() < 1e-12);
    }
}
