use crate::baselines::{ao_optimize, AoConfig, BeamEnv, Observation, StateView};
use crate::channel::CMatrix;
use crate::diffusion::{vectorize, CsiVector, Imputer};
use crate::rng::WorkRng;
use crate::{Error, Result};

use super::model::{encode_tokens, DecisionTransformer, DtInputs};
use super::{build_trajectory, canonicalize_phases, pairs_from_phases, phases_from_pairs, ReplayBuffer, StoredEpisode, Trajectory};

/// Partial observation completed by reverse diffusion.
pub struct DiffusionView<'a> {
    pub imputer: &'a Imputer,
    pub obs: Observation,
    /// `E|H[n,m]|²`, sets the estimation-noise level.
    pub entry_power: f64,
    pub rng: WorkRng,
}

impl StateView for DiffusionView<'_> {
    fn observe(&mut self, channels: &[&CMatrix]) -> Result<Vec<CsiVector>> {
        let conds = self.obs.conditions(channels, self.entry_power, &mut self.rng)?;
        self.imputer.impute(&conds, &mut self.rng)
    }

    fn observed_elements(&self, elements: usize) -> usize {
        crate::diffusion::observed_count(elements, self.obs.rho)
    }
}

/// One rolled-out episode. `trajectory.states` holds what the policy saw.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode: u64,
    pub trajectory: Trajectory,
}

impl Episode {
    pub fn mean_rate(&self) -> f64 {
        self.trajectory.rewards.iter().sum::<f64>() / self.trajectory.len() as f64
    }
}

/// Runs the policy on the given episodes in lockstep. The return-to-go
/// starts at `target_return` and is decremented by each reward.
pub fn dt_rollout(
    model: &DecisionTransformer,
    template: &BeamEnv,
    episodes: &[u64],
    view: &mut dyn StateView,
    tag: u32,
    target_return: f64,
) -> Result<Vec<Episode>> {
    if !(target_return >= 0.0) {
        return Err(Error::Domain(format!("target return {target_return}")));
    }
    let cfg = model.config();
    let env_cfg = template.config();
    if env_cfg.elements() != cfg.elements || env_cfg.antennas != cfg.antennas {
        return Err(Error::Shape("policy and environment disagree on N or M".into()));
    }
    let b = episodes.len();
    let slots = env_cfg.slots;
    let mut envs = Vec::with_capacity(b);
    for &e in episodes {
        let mut env = template.clone();
        env.reset(e)?;
        envs.push(env);
    }
    let mut rtg = vec![vec![target_return]; b];
    let mut states: Vec<Vec<CsiVector>> = vec![Vec::with_capacity(slots); b];
    let mut actions: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(slots); b];
    let mut rewards: Vec<Vec<f64>> = vec![Vec::with_capacity(slots); b];

    for t in 0..slots {
        let hs: Vec<&CMatrix> = envs.iter().map(|e| &e.channel().cascaded).collect();
        let seen = view.observe(&hs)?;
        for (s, x) in states.iter_mut().zip(seen) {
            s.push(x);
        }
        let w = encode_tokens(t + 1, cfg.window)?;
        let mut inputs = DtInputs::new(b, w.len);
        for i in 0..b {
            let srefs: Vec<&CsiVector> = states[i][w.start..=t].iter().collect();
            let arefs: Vec<&[f64]> = actions[i][w.start..t].iter().map(Vec::as_slice).collect();
            inputs.push(tag, &rtg[i][w.start..=t], &srefs, &arefs, w.start, cfg.action_dim());
        }
        let preds = model.predict_last(&inputs)?;
        for (i, pred) in preds.into_iter().enumerate() {
            let phases = phases_from_pairs(&pred)?;
            let step = envs[i].step(&phases)?;
            let next = rtg[i][t] - step.reward;
            rtg[i].push(next);
            rewards[i].push(step.reward);
            actions[i].push(pred);
        }
    }
    episodes
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut r = std::mem::take(&mut rtg[i]);
            r.truncate(slots);
            Ok(Episode {
                episode: e,
                trajectory: Trajectory {
                    returns_to_go: r,
                    states: std::mem::take(&mut states[i]),
                    actions: std::mem::take(&mut actions[i]),
                    rewards: std::mem::take(&mut rewards[i]),
                },
            })
        })
        .collect()
}

/// AO-expert episodes with true-CSI states and canonical phases.
pub fn collect_expert(template: &BeamEnv, episodes: &[u64], tag: u32, ao: &AoConfig) -> Result<ReplayBuffer> {
    let cfg = template.config();
    let mut buf = ReplayBuffer::new(cfg.elements(), cfg.antennas, cfg.slots);
    for &e in episodes {
        let mut env = template.clone();
        env.reset(e)?;
        let mut states = Vec::with_capacity(cfg.slots);
        let mut actions = Vec::with_capacity(cfg.slots);
        let mut rewards = Vec::with_capacity(cfg.slots);
        while !env.done() {
            let h = env.channel().cascaded.clone();
            let best = ao_optimize(&h, cfg.power, cfg.noise_var, ao)?;
            let phases = canonicalize_phases(&best.phases);
            let step = env.step(&phases)?;
            states.push(vectorize(&h));
            actions.push(pairs_from_phases(&phases));
            rewards.push(step.reward);
        }
        let trajectory = build_trajectory(states, actions, rewards)?;
        buf.push(StoredEpisode {
            env: cfg.name.clone(),
            tag,
            prompt: trajectory.returns_to_go[0],
            trajectory,
        })?;
    }
    Ok(buf)
}
