//! Experiment drivers: imputation accuracy over (SNR, ρ) and achievable
//! rate per method on the held-out environment.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::Rng;

use super::config::ExperimentConfig;
use super::dataset::Dataset;
use super::metrics::{Method, MetricsRow};
use super::overhead::effective_rate;
use super::pipeline::{diffusion_view, observation, Scenario, PPO_EPISODES};
use crate::baselines::{
    ao_optimize, ppo_train, random_phases, rc_impute, BeamEnv, Observation, PerfectView, PpoPolicy, RandomFillView,
    StateView,
};
use crate::diffusion::{observed_count, vectorize, Imputer, NmseAccumulator};
use crate::policy::{dt_rollout, DecisionTransformer};
use crate::rng::{derive, streams, WorkRng};
use crate::{Error, Result};

pub const NMSE_EXPERIMENT: &str = "nmse";
pub const RATE_EXPERIMENT: &str = "rate";
/// Per-episode mean rates; `step` holds the episode index.
pub const EPISODE_EXPERIMENT: &str = "rate-episode";
pub const CONVERGENCE_EXPERIMENT: &str = "convergence";

const IMPUTE_BATCH: usize = 100;

/// NMSE of DM imputation (`DEDT` rows) and random completion (`RCDT` rows)
/// for every (SNR, ρ) cell, pooled over the test slots.
pub fn run_nmse_experiment(cfg: &ExperimentConfig, imputer: &Imputer, tests: &[Dataset]) -> Result<Vec<MetricsRow>> {
    if tests.iter().all(|d| d.records.is_empty()) {
        return Err(Error::Config("no test slots".into()));
    }
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &snr_db in &cfg.nmse_snr_db {
        for &rho in &cfg.nmse_rho {
            let obs = Observation {
                rho,
                est_snr_db: Some(snr_db),
                mask: cfg.mask_mode,
            };
            let mut mask_rng = derive(cfg.seed, streams::MASK, cell);
            let mut dm_rng = derive(cfg.seed, streams::EVAL, cell);
            let mut rc_rng = derive(cfg.seed, "rc-eval", cell);
            let (mut dm, mut rc) = (NmseAccumulator::default(), NmseAccumulator::default());
            for d in tests {
                let power = d.header.env.cascaded_entry_power();
                for chunk in d.records.chunks(IMPUTE_BATCH) {
                    let hs: Vec<_> = chunk.iter().map(|r| &r.cascaded).collect();
                    let conds = obs.conditions(&hs, power, &mut mask_rng)?;
                    let est = imputer.impute(&conds, &mut dm_rng)?;
                    for ((h, x), c) in hs.iter().zip(&est).zip(&conds) {
                        let truth = vectorize(h);
                        dm.add(x, &truth);
                        rc.add(&rc_impute(c, power / 2.0, &mut rc_rng)?, &truth);
                    }
                }
            }
            for (method, acc) in [(Method::Dedt, &dm), (Method::Rcdt, &rc)] {
                let mut row = MetricsRow::new(NMSE_EXPERIMENT, "train-pool", method, cfg.seed);
                row.rho = Some(rho);
                row.snr_db = Some(snr_db);
                row.nmse = Some(acc.value()?);
                rows.push(row);
            }
            log::info!("nmse cell snr {snr_db} dB, rho {rho}: dm {:.4}, rc {:.4}", dm.value()?, rc.value()?);
            cell += 1;
        }
    }
    Ok(rows)
}

/// Per-episode mean rates of one method configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRates {
    pub method: Method,
    pub rho: Option<f64>,
    pub pilot_elements: usize,
    pub rates: Vec<f64>,
}

impl EpisodeRates {
    pub fn mean(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len().max(1) as f64
    }

    /// One summary row plus one row per episode.
    pub fn rows(&self, cfg: &ExperimentConfig, env: &str) -> Vec<MetricsRow> {
        let n = cfg.elements();
        let make = |experiment: &str, rate: f64, step: Option<u64>| {
            let mut r = MetricsRow::new(experiment, env, self.method, cfg.seed);
            r.rho = self.rho;
            r.snr_db = cfg.rate_est_snr_db;
            r.raw_rate = Some(rate);
            r.effective_rate = Some(effective_rate(rate, self.pilot_elements, n, &cfg.overhead));
            r.step = step;
            r
        };
        let mut rows = vec![make(RATE_EXPERIMENT, self.mean(), None)];
        rows.extend(self.rates.iter().enumerate().map(|(i, &r)| make(EPISODE_EXPERIMENT, r, Some(i as u64))));
        rows
    }
}

pub fn eval_episodes(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.eval_episodes as u64).collect()
}

/// Runs a fixed per-slot rule over the evaluation episodes.
pub fn evaluate_rule(
    template: &BeamEnv,
    episodes: &[u64],
    rule: &mut dyn FnMut(&crate::channel::CMatrix) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(episodes.len());
    for &e in episodes {
        let mut env = template.clone();
        env.reset(e)?;
        let mut total = 0.0;
        let mut slots = 0;
        while !env.done() {
            let phases = rule(&env.channel().cascaded)?;
            total += env.step(&phases)?.reward;
            slots += 1;
        }
        out.push(total / slots as f64);
    }
    Ok(out)
}

/// Deterministic (mean-action) PPO policy on the evaluation episodes.
pub fn evaluate_ppo(policy: &PpoPolicy, template: &BeamEnv, episodes: &[u64], view: &mut dyn StateView) -> Result<Vec<f64>> {
    let mut envs: Vec<BeamEnv> = Vec::with_capacity(episodes.len());
    for &e in episodes {
        let mut env = template.clone();
        env.reset(e)?;
        envs.push(env);
    }
    let mut totals = vec![0.0; envs.len()];
    let slots = template.config().slots;
    for _ in 0..slots {
        let hs: Vec<_> = envs.iter().map(|e| &e.channel().cascaded).collect();
        let states = view.observe(&hs)?;
        let phases = policy.phases(&states)?;
        for ((env, p), t) in envs.iter_mut().zip(&phases).zip(&mut totals) {
            *t += env.step(p)?.reward;
        }
    }
    Ok(totals.into_iter().map(|t| t / slots as f64).collect())
}

fn dt_rates(
    model: &DecisionTransformer,
    template: &BeamEnv,
    episodes: &[u64],
    view: &mut dyn StateView,
    tag: u32,
    prompt: f64,
) -> Result<Vec<f64>> {
    Ok(dt_rollout(model, template, episodes, view, tag, prompt)?
        .iter()
        .map(|e| e.mean_rate())
        .collect())
}

/// Rates of the decision-transformer variants and the non-learned
/// references on the held-out scenario.
pub fn run_rate_experiment(
    cfg: &ExperimentConfig,
    imputer: &Imputer,
    model: &DecisionTransformer,
    scenario: &Scenario,
    prompt: f64,
) -> Result<Vec<EpisodeRates>> {
    let template = scenario.template()?;
    let episodes = eval_episodes(cfg);
    let n = cfg.elements();
    let power = scenario.entry_power();
    let mut out = Vec::new();

    let rates = dt_rates(model, &template, &episodes, &mut PerfectView, scenario.tag, prompt)?;
    out.push(EpisodeRates {
        method: Method::Pcdt,
        rho: Some(0.0),
        pilot_elements: n,
        rates,
    });
    for (i, &rho) in cfg.rate_rho.iter().enumerate() {
        let mut view = diffusion_view(cfg, imputer, scenario, rho, i as u64);
        let rates = dt_rates(model, &template, &episodes, &mut view, scenario.tag, prompt)?;
        log::info!("DEDT rho {rho}: {:.4}", rates.iter().sum::<f64>() / rates.len() as f64);
        out.push(EpisodeRates {
            method: Method::Dedt,
            rho: Some(rho),
            pilot_elements: observed_count(n, rho),
            rates,
        });
        let mut view = RandomFillView {
            obs: observation(cfg, rho),
            entry_power: power,
            rng: derive(cfg.seed, "rc-rollout", i as u64),
        };
        let rates = dt_rates(model, &template, &episodes, &mut view, scenario.tag, prompt)?;
        out.push(EpisodeRates {
            method: Method::Rcdt,
            rho: Some(rho),
            pilot_elements: observed_count(n, rho),
            rates,
        });
    }

    let env_cfg = template.config().clone();
    let rates = evaluate_rule(&template, &episodes, &mut |h| {
        Ok(ao_optimize(h, env_cfg.power, env_cfg.noise_var, &cfg.ao)?.phases)
    })?;
    out.push(EpisodeRates {
        method: Method::Ao,
        rho: Some(0.0),
        pilot_elements: n,
        rates,
    });
    let mut rng = derive(cfg.seed, "random-policy", 0);
    let rates = evaluate_rule(&template, &episodes, &mut |_| Ok(random_phases(n, &mut rng)))?;
    out.push(EpisodeRates {
        method: Method::Random,
        rho: None,
        pilot_elements: 0,
        rates,
    });
    Ok(out)
}

/// PPO from scratch on the held-out scenario at `compare_rho`, for
/// `DM-PPO` (diffusion view) or `RC-PPO` (random fill).
pub fn run_ppo_experiment(
    cfg: &ExperimentConfig,
    imputer: &Imputer,
    scenario: &Scenario,
    method: Method,
    time_budget: Option<Duration>,
) -> Result<(EpisodeRates, Vec<MetricsRow>)> {
    let template = scenario.template()?;
    let rho = cfg.compare_rho;
    let index = match method {
        Method::DmPpo => 0,
        Method::RcPpo => 1,
        other => return Err(Error::Config(format!("{other} is not a PPO method"))),
    };
    let mut ppo_cfg = cfg.ppo.clone();
    ppo_cfg.time_budget = time_budget;
    let mut train_rng = derive(cfg.seed, streams::PPO, index);
    let make_view = |stream_index: u64| -> Box<dyn StateView + '_> {
        match method {
            Method::DmPpo => Box::new(diffusion_view(cfg, imputer, scenario, rho, 1000 + stream_index)),
            _ => Box::new(RandomFillView {
                obs: observation(cfg, rho),
                entry_power: scenario.entry_power(),
                rng: derive(cfg.seed, "ppo-view", stream_index),
            }),
        }
    };
    let outcome = {
        let mut view = make_view(2 * index);
        ppo_train(&template, view.as_mut(), &ppo_cfg, PPO_EPISODES + index * (1 << 30), &mut train_rng)?
    };
    let rates = {
        let mut view = make_view(2 * index + 1);
        evaluate_ppo(&outcome.policy, &template, &eval_episodes(cfg), view.as_mut())?
    };
    let curve = outcome
        .curve
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let mut r = MetricsRow::new(CONVERGENCE_EXPERIMENT, &scenario.spec.name, method, cfg.seed);
            r.rho = Some(rho);
            r.raw_rate = Some(rate);
            r.step = Some(i as u64 + 1);
            r
        })
        .collect();
    Ok((
        EpisodeRates {
            method,
            rho: Some(rho),
            pilot_elements: observed_count(cfg.elements(), rho),
            rates,
        },
        curve,
    ))
}

/// Rate rows of a fine-tuning run, one per checkpoint.
pub fn convergence_row(cfg: &ExperimentConfig, env: &str, method: Method, step: u64, rate: f64) -> MetricsRow {
    let mut r = MetricsRow::new(CONVERGENCE_EXPERIMENT, env, method, cfg.seed);
    r.rho = Some(cfg.compare_rho);
    r.raw_rate = Some(rate);
    r.step = Some(step);
    r
}

/// One-sided paired bootstrap: the `1 - level` quantile of the resampled
/// mean of `a - b`. A non-negative result supports `mean(a) >= mean(b)`.
pub fn paired_bootstrap_lower(a: &[f64], b: &[f64], resamples: usize, level: f64, rng: &mut WorkRng) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Config("bootstrap needs resamples >= 1 and a level in [0, 1)".into()));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diff.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diff[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let idx = (((1.0 - level) * resamples as f64).floor() as usize).min(resamples - 1);
    Ok(means[idx])
}

/// Groups rate rows by (method, ρ) for lookups; ρ is keyed in thousandths.
pub fn index_rates(rates: &[EpisodeRates]) -> BTreeMap<(Method, Option<i64>), &EpisodeRates> {
    rates
        .iter()
        .map(|r| ((r.method, r.rho.map(|x| (x * 1000.0).round() as i64)), r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn bootstrap_bounds() {
        let mut rng = stream(1, "b");
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(paired_bootstrap_lower(&a, &a, 100, 0.95, &mut rng).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x - 0.5).collect();
        assert!((paired_bootstrap_lower(&a, &b, 100, 0.95, &mut rng).unwrap() - 0.5).abs() < 1e-12);
        let noisy: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let zeros = vec![0.0; 50];
        let lo = paired_bootstrap_lower(&noisy, &zeros, 2000, 0.95, &mut rng).unwrap();
        assert!(lo < 0.0 && lo > -0.5);
        assert!(paired_bootstrap_lower(&a, &zeros, 10, 0.95, &mut rng).is_err());
    }

    #[test]
    fn episode_rows_carry_overhead() {
        let cfg = ExperimentConfig::default();
        let r = EpisodeRates {
            method: Method::Dedt,
            rho: Some(0.5),
            pilot_elements: 8,
            rates: vec![4.0, 6.0],
        };
        let rows = r.rows(&cfg, "heldout");
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].raw_rate, Some(5.0));
        assert_eq!(rows[0].effective_rate, Some(0.75 * 5.0));
        assert_eq!(rows[2].step, Some(1));
        assert_eq!(rows[2].experiment, EPISODE_EXPERIMENT);
    }
}
