//! The pipeline stages behind each CLI command, with their on-disk layout:
//!
//! ```text
//! <out>/data/<env>.bin          channel datasets (gen-data)
//! <out>/data/expert.bin         AO trajectories, training envs (collect-expert)
//! <out>/data/fewshot.bin        AO trajectories, held-out env (collect-expert)
//! <out>/data/rollout.bin        DEDT trajectories (rollout)
//! <out>/models/dm.safetensors   imputer (train-dm)
//! <out>/models/dt.safetensors   pretrained policy (train-dt)
//! <out>/models/dt-finetuned.safetensors
//! <out>/metrics/*.csv
//! <out>/plots/*.svg, <out>/plots/metrics.csv
//! <out>/manifest-<command>.json
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::dataset::Dataset;
use super::experiments::{
    convergence_row, eval_episodes, run_nmse_experiment, run_ppo_experiment, run_rate_experiment, EpisodeRates,
};
use super::manifest::Manifest;
use super::metrics::{read_csv, write_csv, Method, MetricsRow};
use super::pipeline::{
    collect_few_shot, collect_training_experts, diffusion_view, finetune_dt, heldout, prompt_for, scenarios,
    test_datasets, train_dm, train_dt, training_datasets,
};
use super::plot::{emit_plots, Figure};
use crate::diffusion::{observed_count, Imputer};
use crate::policy::{dt_rollout, DecisionTransformer, ReplayBuffer, StoredEpisode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainDm,
    EvalNmse,
    CollectExpert,
    TrainDt,
    Finetune,
    Rollout,
    TrainPpo,
    EvalRate,
    Plot,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::GenData,
        Command::TrainDm,
        Command::EvalNmse,
        Command::CollectExpert,
        Command::TrainDt,
        Command::Finetune,
        Command::Rollout,
        Command::TrainPpo,
        Command::EvalRate,
        Command::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainDm => "train-dm",
            Command::EvalNmse => "eval-nmse",
            Command::CollectExpert => "collect-expert",
            Command::TrainDt => "train-dt",
            Command::Finetune => "finetune",
            Command::Rollout => "rollout",
            Command::TrainPpo => "train-ppo",
            Command::EvalRate => "eval-rate",
            Command::Plot => "plot",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Artifact locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, env: &str) -> PathBuf {
        self.root.join("data").join(format!("{env}.bin"))
    }

    pub fn expert(&self) -> PathBuf {
        self.root.join("data/expert.bin")
    }

    pub fn few_shot(&self) -> PathBuf {
        self.root.join("data/fewshot.bin")
    }

    pub fn rollout(&self) -> PathBuf {
        self.root.join("data/rollout.bin")
    }

    pub fn dm(&self) -> PathBuf {
        self.root.join("models/dm.safetensors")
    }

    pub fn dt(&self) -> PathBuf {
        self.root.join("models/dt.safetensors")
    }

    pub fn dt_finetuned(&self) -> PathBuf {
        self.root.join("models/dt-finetuned.safetensors")
    }

    pub fn metrics(&self, name: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{name}.csv"))
    }

    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingCheckpoint(path.to_path_buf()))
    }
}

fn save_model(path: &Path, bytes: Vec<u8>) -> Result<()> {
    super::container::write_file(path, &bytes)
}

/// Runs one command; every artifact goes under `cfg.out_dir`. Returns the
/// manifest path.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let layout = Layout::new(&cfg.out_dir);
    let mut manifest = Manifest::new(command.name(), cfg.seed, cfg.to_text());
    match command {
        Command::GenData => {
            for d in training_datasets(cfg)? {
                let path = layout.dataset(&d.header.env.name);
                d.save(&path)?;
                manifest.output(&path)?;
            }
        }
        Command::TrainDm => {
            let mut data = Vec::new();
            for spec in &cfg.train_envs {
                let path = layout.dataset(&spec.name);
                require(&path)?;
                data.push(Dataset::load(&path)?);
                manifest.input(&path)?;
            }
            let imputer = train_dm(cfg, &data)?;
            save_model(&layout.dm(), imputer.to_bytes()?)?;
            manifest.output(&layout.dm())?;
        }
        Command::EvalNmse => {
            let imputer = Imputer::load(&layout.dm())?;
            manifest.input(&layout.dm())?;
            let rows = run_nmse_experiment(cfg, &imputer, &test_datasets(cfg)?)?;
            write_csv(&layout.metrics("nmse"), &rows)?;
            manifest.output(&layout.metrics("nmse"))?;
        }
        Command::CollectExpert => {
            let experts = collect_training_experts(cfg)?;
            experts.save(&layout.expert())?;
            let few = collect_few_shot(cfg, &heldout(cfg)?)?;
            few.save(&layout.few_shot())?;
            manifest.output(&layout.expert())?;
            manifest.output(&layout.few_shot())?;
        }
        Command::TrainDt => {
            require(&layout.expert())?;
            let experts = ReplayBuffer::load(&layout.expert())?;
            manifest.input(&layout.expert())?;
            let (model, _) = train_dt(cfg, &experts)?;
            save_model(&layout.dt(), model.to_bytes()?)?;
            manifest.output(&layout.dt())?;
        }
        Command::Finetune => {
            let mut model = DecisionTransformer::load(&layout.dt())?;
            require(&layout.few_shot())?;
            let few = ReplayBuffer::load(&layout.few_shot())?;
            let imputer = Imputer::load(&layout.dm())?;
            for p in [layout.dt(), layout.few_shot(), layout.dm()] {
                manifest.input(&p)?;
            }
            let rows = finetune_with_curve(cfg, &mut model, &few, &imputer)?;
            save_model(&layout.dt_finetuned(), model.to_bytes()?)?;
            write_csv(&layout.metrics("finetune"), &rows)?;
            manifest.output(&layout.dt_finetuned())?;
            manifest.output(&layout.metrics("finetune"))?;
        }
        Command::Rollout => {
            let (model, imputer, few) = load_policy_inputs(&layout, &mut manifest)?;
            let scenario = heldout(cfg)?;
            let mut view = diffusion_view(cfg, &imputer, &scenario, cfg.compare_rho, 500);
            let episodes = eval_episodes(cfg);
            let rolled = dt_rollout(&model, &scenario.template()?, &episodes, &mut view, scenario.tag, prompt_for(cfg, &few))?;
            let mut buffer = ReplayBuffer::new(cfg.elements(), cfg.antennas, cfg.slots);
            for e in &rolled {
                buffer.push(StoredEpisode {
                    env: scenario.spec.name.clone(),
                    tag: scenario.tag,
                    prompt: e.trajectory.returns_to_go[0],
                    trajectory: e.trajectory.clone(),
                })?;
            }
            buffer.save(&layout.rollout())?;
            let rates = EpisodeRates {
                method: Method::Dedt,
                rho: Some(cfg.compare_rho),
                pilot_elements: observed_count(cfg.elements(), cfg.compare_rho),
                rates: rolled.iter().map(|e| e.mean_rate()).collect(),
            };
            let mut rows = rates.rows(cfg, &scenario.spec.name);
            for r in &mut rows {
                r.experiment = format!("rollout-{}", r.experiment);
            }
            write_csv(&layout.metrics("rollout"), &rows)?;
            manifest.output(&layout.rollout())?;
            manifest.output(&layout.metrics("rollout"))?;
        }
        Command::TrainPpo => {
            let imputer = Imputer::load(&layout.dm())?;
            manifest.input(&layout.dm())?;
            let scenario = heldout(cfg)?;
            let mut rows = Vec::new();
            for method in [Method::DmPpo, Method::RcPpo] {
                let (rates, curve) = run_ppo_experiment(cfg, &imputer, &scenario, method, cfg.ppo.time_budget)?;
                rows.extend(rates.rows(cfg, &scenario.spec.name));
                rows.extend(curve);
            }
            write_csv(&layout.metrics("ppo"), &rows)?;
            manifest.output(&layout.metrics("ppo"))?;
        }
        Command::EvalRate => {
            let (model, imputer, few) = load_policy_inputs(&layout, &mut manifest)?;
            let scenario = heldout(cfg)?;
            let rates = run_rate_experiment(cfg, &imputer, &model, &scenario, prompt_for(cfg, &few))?;
            let rows: Vec<MetricsRow> = rates.iter().flat_map(|r| r.rows(cfg, &scenario.spec.name)).collect();
            write_csv(&layout.metrics("rate"), &rows)?;
            manifest.output(&layout.metrics("rate"))?;
        }
        Command::Plot => {
            let rows = read_all_metrics(&layout, &mut manifest)?;
            let figures: Vec<Figure> = Figure::ALL
                .into_iter()
                .filter(|f| rows.iter().any(|r| r.experiment == f.experiment_name()))
                .collect();
            if figures.is_empty() {
                return Err(Error::NothingToPlot(format!("no metrics under {}", layout.metrics_dir().display())));
            }
            for p in emit_plots(&rows, &layout.plots(), &figures, &cfg.overhead, cfg.elements())? {
                manifest.output(&p)?;
            }
            manifest.output(&layout.plots().join("metrics.csv"))?;
        }
    }
    manifest.write(&layout.root)
}

fn load_policy_inputs(layout: &Layout, manifest: &mut Manifest) -> Result<(DecisionTransformer, Imputer, ReplayBuffer)> {
    let model = DecisionTransformer::load(&layout.dt_finetuned())?;
    let imputer = Imputer::load(&layout.dm())?;
    require(&layout.few_shot())?;
    let few = ReplayBuffer::load(&layout.few_shot())?;
    for p in [layout.dt_finetuned(), layout.dm(), layout.few_shot()] {
        manifest.input(&p)?;
    }
    Ok((model, imputer, few))
}

/// Metrics files in name order, concatenated.
fn read_all_metrics(layout: &Layout, manifest: &mut Manifest) -> Result<Vec<MetricsRow>> {
    let dir = layout.metrics_dir();
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_csv(&f)?);
        manifest.input(&f)?;
    }
    Ok(rows)
}

/// Fine-tunes the head, recording the DEDT rate on a few evaluation
/// episodes before training and at five evenly spaced checkpoints.
pub fn finetune_with_curve(
    cfg: &ExperimentConfig,
    model: &mut DecisionTransformer,
    few: &ReplayBuffer,
    imputer: &Imputer,
) -> Result<Vec<MetricsRow>> {
    let scenario = scenarios(cfg)?.pop().expect("held-out scenario");
    let template = scenario.template()?;
    let prompt = prompt_for(cfg, few);
    let episodes: Vec<u64> = eval_episodes(cfg).into_iter().take(4).collect();
    let name = scenario.spec.name.clone();
    let mut rows = Vec::new();
    let mut measure = |step: usize, m: &DecisionTransformer| -> Result<()> {
        let mut view = diffusion_view(cfg, imputer, &scenario, cfg.compare_rho, 700);
        let rolled = dt_rollout(m, &template, &episodes, &mut view, scenario.tag, prompt)?;
        let rate = rolled.iter().map(|e| e.mean_rate()).sum::<f64>() / rolled.len() as f64;
        rows.push(convergence_row(cfg, &name, Method::Dedt, step as u64, rate));
        Ok(())
    };
    measure(0, model)?;
    let every = cfg.finetune_steps.div_ceil(5).max(1);
    finetune_dt(cfg, model, few, Some((every, &mut measure)))?;
    Ok(rows)
}
