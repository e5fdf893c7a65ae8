//! Flat `key = value` configuration.
//!
//! Lines starting with `#` are comments. Lists are comma separated. Every
//! key has a default, so an empty file is a valid desk-scale configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{AoConfig, MaskMode, PpoConfig};
use crate::channel::{CorrelationModel, EnvConfig, RisGeometry};
use crate::diffusion::{DenoiserConfig, DmTrainConfig, KSampling, NoiseSchedule, ScheduleSpec};
use crate::policy::{DtConfig, DtTrainConfig};
use crate::rng::derive;
use crate::{Error, Result};

/// One scenario in the environment set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    /// Element spacing in wavelengths (`d1 = d2`).
    pub spacing: f64,
    pub mu_bs: f64,
    pub mu_user: f64,
}

/// Pilot overhead: `max(0, 1 - N_p T_p / T_s)` of each slot carries data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadModel {
    pub pilot_symbols: f64,
    /// `None` means `2N`.
    pub slot_symbols: Option<f64>,
}

impl Default for OverheadModel {
    fn default() -> Self {
        Self {
            pilot_symbols: 1.0,
            slot_symbols: None,
        }
    }
}

impl OverheadModel {
    pub fn slot_symbols_for(&self, elements: usize) -> f64 {
        self.slot_symbols.unwrap_or(2.0 * elements as f64)
    }

    pub fn caption(&self, elements: usize) -> String {
        format!("T_p = {}, T_s = {}", self.pilot_symbols, self.slot_symbols_for(elements))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub rows: usize,
    pub cols: usize,
    pub antennas: usize,
    pub wavelength: f64,
    pub correlation: CorrelationModel,
    pub slots: usize,
    pub power: f64,
    /// Per-entry receive SNR: `noise_var = P E|H[n,m]|² / 10^(snr/10)`.
    pub snr_db: f64,
    pub train_envs: Vec<EnvSpec>,
    pub heldout: EnvSpec,

    pub schedule: ScheduleSpec,
    pub dm: DenoiserConfig,
    pub dm_train: DmTrainConfig,
    pub dm_train_slots: usize,

    pub dt: DtConfig,
    pub dt_train: DtTrainConfig,
    pub expert_episodes: usize,
    pub prompt_scale: f64,
    pub finetune_episodes: usize,
    pub finetune_steps: usize,
    pub finetune_lr: f64,

    pub ao: AoConfig,
    pub ppo: PpoConfig,

    pub overhead: OverheadModel,
    pub mask_mode: MaskMode,
    pub nmse_rho: Vec<f64>,
    pub nmse_snr_db: Vec<f64>,
    pub nmse_slots: usize,
    pub rate_rho: Vec<f64>,
    /// Estimation SNR used in the rate experiments; `None` is noiseless.
    pub rate_est_snr_db: Option<f64>,
    /// Mask ratio at which methods are compared head to head.
    pub compare_rho: f64,
    pub eval_episodes: usize,
}

fn default_envs() -> Vec<EnvSpec> {
    [(0.22, 0.5, 0.5), (0.24, 0.4, 0.6), (0.25, 0.6, 0.4), (0.26, 0.5, 0.45), (0.28, 0.45, 0.55)]
        .iter()
        .enumerate()
        .map(|(i, &(spacing, mu_bs, mu_user))| EnvSpec {
            name: format!("train{i}"),
            spacing,
            mu_bs,
            mu_user,
        })
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let (rows, cols, antennas) = (4, 4, 2);
        let n = rows * cols;
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/desk"),
            rows,
            cols,
            antennas,
            wavelength: 0.1,
            correlation: CorrelationModel::ColumnOffset,
            slots: 20,
            power: 1.0,
            snr_db: -13.0,
            train_envs: default_envs(),
            heldout: EnvSpec {
                name: "heldout".into(),
                spacing: 0.23,
                mu_bs: 0.55,
                mu_user: 0.35,
            },
            schedule: ScheduleSpec {
                steps: 100,
                b_first: 1e-4,
                b_last: 0.1,
            },
            dm: DenoiserConfig::desk(n, antennas),
            dm_train: DmTrainConfig {
                steps: 8000,
                batch: 32,
                learning_rate: 1e-3,
                ..Default::default()
            },
            dm_train_slots: 5000,
            dt: DtConfig::desk(n, antennas),
            dt_train: DtTrainConfig {
                iters: 8000,
                batch: 64,
                learning_rate: 1e-3,
                ..Default::default()
            },
            expert_episodes: 40,
            prompt_scale: 1.0,
            finetune_episodes: 10,
            finetune_steps: 300,
            finetune_lr: 1e-3,
            ao: AoConfig::default(),
            ppo: PpoConfig::default(),
            overhead: OverheadModel::default(),
            mask_mode: MaskMode::Random,
            nmse_rho: vec![0.25, 0.5, 0.75],
            nmse_snr_db: vec![0.0, 10.0, 20.0],
            nmse_slots: 200,
            rate_rho: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            rate_est_snr_db: Some(10.0),
            compare_rho: 0.5,
            eval_episodes: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse `{value}` for {key} as a boolean"))),
    }
}

fn parse_optional_db(key: &str, value: &str) -> Result<Option<f64>> {
    match value.trim() {
        "none" | "inf" | "noiseless" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl ExperimentConfig {
    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "ris.rows" => self.rows = parse(key, v)?,
            "ris.cols" => self.cols = parse(key, v)?,
            "antennas" => self.antennas = parse(key, v)?,
            "wavelength" => self.wavelength = parse(key, v)?,
            "correlation" => {
                self.correlation = match v {
                    "column_offset" => CorrelationModel::ColumnOffset,
                    "euclidean" => CorrelationModel::Euclidean,
                    _ => return Err(Error::Config(format!("unknown correlation model `{v}`"))),
                }
            }
            "slots" => self.slots = parse(key, v)?,
            "power" => self.power = parse(key, v)?,
            "snr_db" => self.snr_db = parse(key, v)?,
            "envs.count" => {
                let count: usize = parse(key, v)?;
                let defaults = default_envs();
                self.train_envs.resize_with(count, || {
                    let mut e = defaults[0].clone();
                    e.name = String::new();
                    e
                });
                for (i, e) in self.train_envs.iter_mut().enumerate() {
                    if e.name.is_empty() {
                        e.name = format!("train{i}");
                    }
                }
            }
            "dm.k" => self.schedule.steps = parse(key, v)?,
            "dm.b_first" => self.schedule.b_first = parse(key, v)?,
            "dm.b_last" => self.schedule.b_last = parse(key, v)?,
            "dm.width" => self.dm.width = parse(key, v)?,
            "dm.heads" => self.dm.heads = parse(key, v)?,
            "dm.layers" => self.dm.layers = parse(key, v)?,
            "dm.kernel" => self.dm.kernel = parse(key, v)?,
            "dm.dropout" => self.dm.dropout = parse(key, v)?,
            "dm.batch" => self.dm_train.batch = parse(key, v)?,
            "dm.steps" => self.dm_train.steps = parse(key, v)?,
            "dm.lr" => self.dm_train.learning_rate = parse(key, v)?,
            "dm.full_k" => {
                self.dm_train.k_sampling = if parse_bool(key, v)? { KSampling::All } else { KSampling::Uniform }
            }
            "dm.train_slots" => self.dm_train_slots = parse(key, v)?,
            "dm.rho_max" => self.dm_train.rho_max = parse(key, v)?,
            "dt.blocks" => self.dt.blocks = parse(key, v)?,
            "dt.width" => self.dt.width = parse(key, v)?,
            "dt.heads" => self.dt.heads = parse(key, v)?,
            "dt.dropout" => self.dt.dropout = parse(key, v)?,
            "dt.window" => self.dt.window = parse(key, v)?,
            "dt.iters" => self.dt_train.iters = parse(key, v)?,
            "dt.batch" => self.dt_train.batch = parse(key, v)?,
            "dt.lr" => self.dt_train.learning_rate = parse(key, v)?,
            "dt.final_only" => self.dt_train.final_only = parse_bool(key, v)?,
            "dt.tag_dropout" => self.dt_train.tag_dropout = parse(key, v)?,
            "dt.return_scale" => self.dt.return_scale = parse(key, v)?,
            "dt.expert_episodes" => self.expert_episodes = parse(key, v)?,
            "dt.prompt_scale" => self.prompt_scale = parse(key, v)?,
            "finetune.episodes" => self.finetune_episodes = parse(key, v)?,
            "finetune.steps" => self.finetune_steps = parse(key, v)?,
            "finetune.lr" => self.finetune_lr = parse(key, v)?,
            "ao.sweeps" => self.ao.sweeps = parse(key, v)?,
            "ao.restarts" => self.ao.restarts = parse(key, v)?,
            "ppo.rollout" => self.ppo.rollout = parse(key, v)?,
            "ppo.envs" => self.ppo.envs = parse(key, v)?,
            "ppo.epochs" => self.ppo.epochs = parse(key, v)?,
            "ppo.minibatch" => self.ppo.minibatch = parse(key, v)?,
            "ppo.clip" => self.ppo.clip = parse(key, v)?,
            "ppo.discount" => self.ppo.discount = parse(key, v)?,
            "ppo.lr" => self.ppo.learning_rate = parse(key, v)?,
            "ppo.hidden" => self.ppo.hidden = parse(key, v)?,
            "ppo.total_steps" => self.ppo.total_steps = parse(key, v)?,
            "ppo.time_budget_s" => {
                self.ppo.time_budget = match v {
                    "none" => None,
                    _ => Some(std::time::Duration::from_secs_f64(parse(key, v)?)),
                }
            }
            "overhead.pilot_symbols" => self.overhead.pilot_symbols = parse(key, v)?,
            "overhead.slot_symbols" => {
                self.overhead.slot_symbols = match v {
                    "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "mask.mode" => {
                self.mask_mode = match v {
                    "random" => MaskMode::Random,
                    "grid" => MaskMode::Grid,
                    _ => return Err(Error::Config(format!("unknown mask mode `{v}`"))),
                }
            }
            "nmse.rho" => self.nmse_rho = parse_list(key, v)?,
            "nmse.snr_db" => self.nmse_snr_db = parse_list(key, v)?,
            "nmse.slots" => self.nmse_slots = parse(key, v)?,
            "rate.rho" => self.rate_rho = parse_list(key, v)?,
            "rate.est_snr_db" => self.rate_est_snr_db = parse_optional_db(key, v)?,
            "rate.compare_rho" => self.compare_rho = parse(key, v)?,
            "eval.episodes" => self.eval_episodes = parse(key, v)?,
            k => return self.set_env_key(k, v),
        }
        Ok(())
    }

    /// `env.<i>.<field>` and `heldout.<field>`.
    fn set_env_key(&mut self, key: &str, v: &str) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let (spec, field) = match parts.as_slice() {
            ["heldout", field] => (&mut self.heldout, *field),
            ["env", idx, field] => {
                let i: usize = parse(key, idx)?;
                let count = self.train_envs.len();
                let spec = self
                    .train_envs
                    .get_mut(i)
                    .ok_or_else(|| Error::Config(format!("{key}: only {count} training envs (set envs.count)")))?;
                (spec, *field)
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        };
        match field {
            "name" => spec.name = v.to_string(),
            "spacing" => spec.spacing = parse(key, v)?,
            "mu_bs" => spec.mu_bs = parse(key, v)?,
            "mu_user" => spec.mu_user = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Keeps the model shapes in step with the RIS and antenna settings.
    pub fn sync_shapes(&mut self) {
        let n = self.elements();
        self.dm.elements = n;
        self.dm.antennas = self.antennas;
        self.dt.elements = n;
        self.dt.antennas = self.antennas;
        self.dt.num_tags = self.dt.num_tags.max(self.train_envs.len() + 1);
        self.dt.max_timestep = self.dt.max_timestep.max(self.slots);
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_envs.is_empty() {
            return Err(Error::Config("at least one training environment is required".into()));
        }
        for (name, grid) in [("nmse.rho", &self.nmse_rho), ("nmse.snr_db", &self.nmse_snr_db), ("rate.rho", &self.rate_rho)] {
            if grid.is_empty() {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        if self.nmse_rho.iter().chain(&self.rate_rho).any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("mask ratios must lie in [0, 1]".into()));
        }
        if self.overhead.slot_symbols.is_some_and(|t| !(t > 0.0)) || !(self.overhead.pilot_symbols >= 0.0) {
            return Err(Error::Config("overhead needs T_s > 0 and T_p >= 0".into()));
        }
        if self.eval_episodes == 0 || self.nmse_slots == 0 || self.slots == 0 {
            return Err(Error::Config("eval.episodes, nmse.slots and slots must be >= 1".into()));
        }
        self.dm.validate()?;
        self.dt.validate()?;
        self.dm_train.validate()?;
        self.ppo.validate()?;
        NoiseSchedule::from_spec(self.schedule)?;
        for e in self.all_envs() {
            self.env_config(&e, 0)?.validate()?;
        }
        Ok(())
    }

    pub fn all_envs(&self) -> Vec<EnvSpec> {
        let mut v = self.train_envs.clone();
        v.push(self.heldout.clone());
        v
    }

    /// Tag 0 is reserved for environments never seen in training.
    pub fn tag_of(&self, name: &str) -> u32 {
        self.train_envs
            .iter()
            .position(|e| e.name == name)
            .map_or(0, |i| i as u32 + 1)
    }

    /// Concrete scenario; `index` separates the seeds of different envs.
    pub fn env_config(&self, spec: &EnvSpec, index: u64) -> Result<EnvConfig> {
        let geometry = RisGeometry::with_spacing_ratio(self.rows, self.cols, spec.spacing, self.wavelength)?;
        let sigma_area = geometry.element_area();
        let mut env = EnvConfig {
            name: spec.name.clone(),
            geometry,
            antennas: self.antennas,
            mu_m: vec![spec.mu_bs; self.antennas],
            mu_0: spec.mu_user,
            sigma_area,
            power: self.power,
            noise_var: 1.0,
            slots: self.slots,
            seed: derive(self.seed, "env", index).random(),
            correlation: self.correlation,
        };
        env.noise_var = self.power * env.cascaded_entry_power() / 10f64.powf(self.snr_db / 10.0);
        Ok(env)
    }

    /// Flat `key = value` rendering, accepted back by [`Self::parse_str`].
    pub fn to_text(&self) -> String {
        let mut m = BTreeMap::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        m.insert("seed".to_string(), self.seed.to_string());
        m.insert("out_dir".into(), self.out_dir.display().to_string());
        m.insert("ris.rows".into(), self.rows.to_string());
        m.insert("ris.cols".into(), self.cols.to_string());
        m.insert("antennas".into(), self.antennas.to_string());
        m.insert("wavelength".into(), self.wavelength.to_string());
        m.insert(
            "correlation".into(),
            match self.correlation {
                CorrelationModel::ColumnOffset => "column_offset",
                CorrelationModel::Euclidean => "euclidean",
            }
            .into(),
        );
        m.insert("slots".into(), self.slots.to_string());
        m.insert("power".into(), self.power.to_string());
        m.insert("snr_db".into(), self.snr_db.to_string());
        m.insert("envs.count".into(), self.train_envs.len().to_string());
        for (i, e) in self.train_envs.iter().enumerate() {
            m.insert(format!("env.{i}.name"), e.name.clone());
            m.insert(format!("env.{i}.spacing"), e.spacing.to_string());
            m.insert(format!("env.{i}.mu_bs"), e.mu_bs.to_string());
            m.insert(format!("env.{i}.mu_user"), e.mu_user.to_string());
        }
        m.insert("heldout.name".into(), self.heldout.name.clone());
        m.insert("heldout.spacing".into(), self.heldout.spacing.to_string());
        m.insert("heldout.mu_bs".into(), self.heldout.mu_bs.to_string());
        m.insert("heldout.mu_user".into(), self.heldout.mu_user.to_string());
        m.insert("dm.k".into(), self.schedule.steps.to_string());
        m.insert("dm.b_first".into(), self.schedule.b_first.to_string());
        m.insert("dm.b_last".into(), self.schedule.b_last.to_string());
        m.insert("dm.width".into(), self.dm.width.to_string());
        m.insert("dm.heads".into(), self.dm.heads.to_string());
        m.insert("dm.layers".into(), self.dm.layers.to_string());
        m.insert("dm.kernel".into(), self.dm.kernel.to_string());
        m.insert("dm.dropout".into(), self.dm.dropout.to_string());
        m.insert("dm.batch".into(), self.dm_train.batch.to_string());
        m.insert("dm.steps".into(), self.dm_train.steps.to_string());
        m.insert("dm.lr".into(), self.dm_train.learning_rate.to_string());
        m.insert("dm.full_k".into(), (self.dm_train.k_sampling == KSampling::All).to_string());
        m.insert("dm.train_slots".into(), self.dm_train_slots.to_string());
        m.insert("dm.rho_max".into(), self.dm_train.rho_max.to_string());
        m.insert("dt.blocks".into(), self.dt.blocks.to_string());
        m.insert("dt.width".into(), self.dt.width.to_string());
        m.insert("dt.heads".into(), self.dt.heads.to_string());
        m.insert("dt.dropout".into(), self.dt.dropout.to_string());
        m.insert("dt.window".into(), self.dt.window.to_string());
        m.insert("dt.iters".into(), self.dt_train.iters.to_string());
        m.insert("dt.batch".into(), self.dt_train.batch.to_string());
        m.insert("dt.lr".into(), self.dt_train.learning_rate.to_string());
        m.insert("dt.final_only".into(), self.dt_train.final_only.to_string());
        m.insert("dt.tag_dropout".into(), self.dt_train.tag_dropout.to_string());
        m.insert("dt.return_scale".into(), self.dt.return_scale.to_string());
        m.insert("dt.expert_episodes".into(), self.expert_episodes.to_string());
        m.insert("dt.prompt_scale".into(), self.prompt_scale.to_string());
        m.insert("finetune.episodes".into(), self.finetune_episodes.to_string());
        m.insert("finetune.steps".into(), self.finetune_steps.to_string());
        m.insert("finetune.lr".into(), self.finetune_lr.to_string());
        m.insert("ao.sweeps".into(), self.ao.sweeps.to_string());
        m.insert("ao.restarts".into(), self.ao.restarts.to_string());
        m.insert("ppo.rollout".into(), self.ppo.rollout.to_string());
        m.insert("ppo.envs".into(), self.ppo.envs.to_string());
        m.insert("ppo.epochs".into(), self.ppo.epochs.to_string());
        m.insert("ppo.minibatch".into(), self.ppo.minibatch.to_string());
        m.insert("ppo.clip".into(), self.ppo.clip.to_string());
        m.insert("ppo.discount".into(), self.ppo.discount.to_string());
        m.insert("ppo.lr".into(), self.ppo.learning_rate.to_string());
        m.insert("ppo.hidden".into(), self.ppo.hidden.to_string());
        m.insert("ppo.total_steps".into(), self.ppo.total_steps.to_string());
        m.insert(
            "ppo.time_budget_s".into(),
            self.ppo.time_budget.map_or("none".into(), |d| d.as_secs_f64().to_string()),
        );
        m.insert("overhead.pilot_symbols".into(), self.overhead.pilot_symbols.to_string());
        m.insert(
            "overhead.slot_symbols".into(),
            self.overhead.slot_symbols.map_or("auto".into(), |t| t.to_string()),
        );
        m.insert(
            "mask.mode".into(),
            match self.mask_mode {
                MaskMode::Random => "random",
                MaskMode::Grid => "grid",
            }
            .into(),
        );
        m.insert("nmse.rho".into(), list(&self.nmse_rho));
        m.insert("nmse.snr_db".into(), list(&self.nmse_snr_db));
        m.insert("nmse.slots".into(), self.nmse_slots.to_string());
        m.insert("rate.rho".into(), list(&self.rate_rho));
        m.insert(
            "rate.est_snr_db".into(),
            self.rate_est_snr_db.map_or("none".into(), |d| d.to_string()),
        );
        m.insert("rate.compare_rho".into(), self.compare_rho.to_string());
        m.insert("eval.episodes".into(), self.eval_episodes.to_string());
        // envs.count must precede env.<i>.* when read back
        let mut out = format!("envs.count = {}\n", self.train_envs.len());
        for (k, v) in m {
            if k != "envs.count" {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let mut c = ExperimentConfig::default();
        c.sync_shapes();
        c.validate().unwrap();
        assert_eq!(c.elements(), 16);
        assert_eq!(c.tag_of("train2"), 3);
        assert_eq!(c.tag_of("heldout"), 0);
    }

    #[test]
    fn parse_and_override() {
        let mut c = ExperimentConfig::parse_str("# comment\nseed = 3\nnmse.rho = 0.1, 0.2\nenv.1.spacing = 0.3\nrate.est_snr_db = none\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.nmse_rho, vec![0.1, 0.2]);
        assert_eq!(c.train_envs[1].spacing, 0.3);
        assert_eq!(c.rate_est_snr_db, None);
        c.apply_override("dm.k=50").unwrap();
        assert_eq!(c.schedule.steps, 50);
        assert!(c.apply_override("nonsense=1").is_err());
        assert!(c.apply_override("seed").is_err());
        assert!(ExperimentConfig::parse_str("seed = x").is_err());
        assert!(ExperimentConfig::parse_str("env.9.spacing = 0.3").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.apply_override("envs.count=2").unwrap();
        c.apply_override("heldout.mu_bs=0.7").unwrap();
        c.apply_override("overhead.slot_symbols=40").unwrap();
        let back = ExperimentConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn noise_follows_snr() {
        let c = ExperimentConfig::default();
        let e = c.env_config(&c.train_envs[0], 0).unwrap();
        let snr = c.power * e.cascaded_entry_power() / e.noise_var;
        assert!((snr / 10f64.powf(c.snr_db / 10.0) - 1.0).abs() < 1e-12);
        assert_ne!(c.env_config(&c.train_envs[0], 1).unwrap().seed, e.seed);
    }

    #[test]
    fn empty_grids_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.nmse_rho.clear();
        assert!(c.validate().is_err());
    }
}
