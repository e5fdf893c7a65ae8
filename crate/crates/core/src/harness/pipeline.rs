//! Training stages shared by the CLI and the experiment drivers.

use std::sync::Arc;

use rand::Rng;

use super::config::{EnvSpec, ExperimentConfig};
use super::dataset::{generate_dataset, Dataset};
use crate::baselines::{BeamEnv, Observation};
use crate::channel::{build_correlation_with, CorrelationMatrix, EnvConfig};
use crate::diffusion::{
    dm_loss, train_denoiser, CsiVector, Denoiser, DmTrainConfig, Imputer, NoisePredictor, NoiseSchedule, TrainExample,
    TrainingInfo,
};
use crate::nn::Mode;
use crate::policy::{
    collect_expert, dt_train, fine_tune_with, Checkpoint, DecisionTransformer, DiffusionView, ReplayBuffer,
};
use crate::rng::{derive, stream, streams};
use crate::{Error, Result};

/// Episode index ranges. Evaluation uses `0..E`; everything that trains
/// draws from disjoint ranges above these bases.
pub const EXPERT_EPISODES: u64 = 1 << 40;
pub const FEW_SHOT_EPISODES: u64 = (1 << 40) + (1 << 36);
pub const PPO_EPISODES: u64 = (1 << 40) + (2 << 36);
const ENV_STRIDE: u64 = 1 << 24;

/// One environment with its correlation matrix and tag.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: EnvSpec,
    pub env: EnvConfig,
    pub corr: Arc<CorrelationMatrix>,
    pub tag: u32,
}

impl Scenario {
    pub fn template(&self) -> Result<BeamEnv> {
        BeamEnv::new(self.env.clone(), self.corr.clone(), 0)
    }

    pub fn entry_power(&self) -> f64 {
        self.env.cascaded_entry_power()
    }
}

/// Training scenarios in order, then the held-out one last.
pub fn scenarios(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    cfg.all_envs()
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let env = cfg.env_config(&spec, i as u64)?;
            let corr = Arc::new(build_correlation_with(&env.geometry, env.correlation)?);
            let tag = cfg.tag_of(&spec.name);
            Ok(Scenario { spec, env, corr, tag })
        })
        .collect()
}

pub fn heldout(cfg: &ExperimentConfig) -> Result<Scenario> {
    let mut all = scenarios(cfg)?;
    Ok(all.pop().expect("held-out scenario is always present"))
}

/// DM training sets, one per training environment, splitting
/// `dm_train_slots` evenly.
pub fn training_datasets(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    let envs = cfg.train_envs.len();
    let per_env = cfg.dm_train_slots.div_ceil(envs).max(1);
    scenarios(cfg)?
        .iter()
        .take(envs)
        .enumerate()
        .map(|(i, s)| generate_dataset(&s.env, per_env, derive(cfg.seed, streams::DATASET, i as u64).random()))
        .collect()
}

/// Held-out slots from the training environments for NMSE evaluation.
pub fn test_datasets(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    let envs = cfg.train_envs.len();
    let per_env = cfg.nmse_slots.div_ceil(envs).max(1);
    scenarios(cfg)?
        .iter()
        .take(envs)
        .enumerate()
        .map(|(i, s)| generate_dataset(&s.env, per_env, derive(cfg.seed, "test-data", i as u64).random()))
        .collect()
}

/// RMS of the real entries.
pub fn data_scale(data: &[CsiVector]) -> Result<f64> {
    let count: usize = data.iter().map(CsiVector::len).sum();
    if count == 0 {
        return Err(Error::Training("no training data".into()));
    }
    let energy: f64 = data.iter().map(CsiVector::energy).sum();
    Ok((energy / count as f64).sqrt())
}

/// Mean loss over a fixed, seeded set of examples with dropout off.
pub fn dm_validation_loss<P: NoisePredictor>(
    model: &P,
    data: &[CsiVector],
    sched: &NoiseSchedule,
    train: &DmTrainConfig,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Training("empty validation set".into()));
    }
    let mut rng = stream(seed, "dm-validation");
    let examples: Vec<TrainExample> = data
        .iter()
        .map(|x| train.draw_example(x.clone(), model.elements(), &mut rng))
        .collect();
    let mut total = 0.0;
    for chunk in examples.chunks(64) {
        let loss = dm_loss(model, chunk, sched, train.k_sampling, &mut rng, &mut Mode::Eval)?;
        total += loss.to_scalar::<f64>()? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Trains the imputer on the pooled datasets. One in twenty slots is held
/// back for the validation loss.
pub fn train_dm(cfg: &ExperimentConfig, datasets: &[Dataset]) -> Result<Imputer> {
    let vectors: Vec<CsiVector> = datasets.iter().flat_map(Dataset::cascaded_vectors).collect();
    let scale = data_scale(&vectors)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, x) in vectors.iter().enumerate() {
        let x = x.scaled(1.0 / scale);
        if i % 20 == 19 {
            val.push(x);
        } else {
            train.push(x);
        }
    }
    if val.is_empty() {
        val.push(train[0].clone());
    }
    let sched = NoiseSchedule::from_spec(cfg.schedule)?;
    let model = Denoiser::new(cfg.dm, &mut derive(cfg.seed, streams::INIT, 0))?;
    let history = train_denoiser(&model, &train, &sched, &cfg.dm_train, cfg.dm.dropout, &mut stream(cfg.seed, streams::DM_TRAIN))?;
    let validation = dm_validation_loss(&model, &val, &sched, &cfg.dm_train, cfg.seed)?;
    let tail = history.len().min(50).max(1);
    let final_loss = history.iter().rev().take(tail).sum::<f64>() / tail as f64;
    log::info!("dm trained: final loss {final_loss:.4}, validation {validation:.4}");
    Imputer::new(
        model,
        sched,
        cfg.rows,
        cfg.cols,
        scale,
        TrainingInfo {
            steps: history.len(),
            final_loss,
            seed: cfg.seed,
            validation_loss: Some(validation),
        },
    )
}

/// AO-expert episodes on every training environment.
pub fn collect_training_experts(cfg: &ExperimentConfig) -> Result<ReplayBuffer> {
    let all = scenarios(cfg)?;
    let mut buffer = ReplayBuffer::new(cfg.elements(), cfg.antennas, cfg.slots);
    for (i, s) in all.iter().take(cfg.train_envs.len()).enumerate() {
        let base = EXPERT_EPISODES + i as u64 * ENV_STRIDE;
        let episodes: Vec<u64> = (base..base + cfg.expert_episodes as u64).collect();
        buffer.extend(collect_expert(&s.template()?, &episodes, s.tag, &cfg.ao)?)?;
    }
    Ok(buffer)
}

/// Few-shot expert episodes on the held-out environment, under the unknown tag.
pub fn collect_few_shot(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<ReplayBuffer> {
    let episodes: Vec<u64> = (FEW_SHOT_EPISODES..FEW_SHOT_EPISODES + cfg.finetune_episodes as u64).collect();
    collect_expert(&scenario.template()?, &episodes, scenario.tag, &cfg.ao)
}

pub fn train_dt(cfg: &ExperimentConfig, buffer: &ReplayBuffer) -> Result<(DecisionTransformer, Vec<f64>)> {
    let mut model = DecisionTransformer::new(cfg.dt, &mut derive(cfg.seed, streams::INIT, 1))?;
    let history = dt_train(&mut model, buffer, &cfg.dt_train, cfg.seed, &mut stream(cfg.seed, streams::DT_TRAIN))?;
    Ok((model, history))
}

/// Head-only adaptation on the few-shot buffer.
pub fn finetune_dt(
    cfg: &ExperimentConfig,
    model: &mut DecisionTransformer,
    few_shot: &ReplayBuffer,
    checkpoint: Option<Checkpoint<'_>>,
) -> Result<Vec<f64>> {
    let mut tc = cfg.dt_train.clone();
    tc.learning_rate = cfg.finetune_lr;
    tc.tag_dropout = 0.0;
    fine_tune_with(model, few_shot, cfg.finetune_steps, &tc, &mut stream(cfg.seed, "finetune"), checkpoint)
}

/// Return-to-go prompt for a buffer of expert episodes.
pub fn prompt_for(cfg: &ExperimentConfig, buffer: &ReplayBuffer) -> f64 {
    cfg.prompt_scale * buffer.mean_return()
}

pub fn observation(cfg: &ExperimentConfig, rho: f64) -> Observation {
    Observation {
        rho,
        est_snr_db: cfg.rate_est_snr_db,
        mask: cfg.mask_mode,
    }
}

pub fn diffusion_view<'a>(cfg: &ExperimentConfig, imputer: &'a Imputer, scenario: &Scenario, rho: f64, index: u64) -> DiffusionView<'a> {
    DiffusionView {
        imputer,
        obs: observation(cfg, rho),
        entry_power: scenario.entry_power(),
        rng: derive(cfg.seed, streams::ROLLOUT, index),
    }
}
