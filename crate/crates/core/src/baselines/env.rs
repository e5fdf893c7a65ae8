use std::sync::Arc;

use rand::Rng;

use crate::channel::{mrt_rate, sample_slot, CMatrix, ChannelRealization, CorrelationMatrix, EnvConfig};
use crate::diffusion::{extract_condition, vectorize, CsiVector, MaskPattern};
use crate::rng::{derive, WorkRng};
use crate::{Error, Result};

/// Outcome of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub done: bool,
}

/// One episode of `T` slots with i.i.d. channels. The channel sequence is a
/// function of `(env seed, episode index)` only, so every method evaluated
/// on the same episode sees the same channels.
#[derive(Debug, Clone)]
pub struct BeamEnv {
    cfg: EnvConfig,
    corr: Arc<CorrelationMatrix>,
    rng: WorkRng,
    slot: usize,
    current: ChannelRealization,
}

impl BeamEnv {
    pub fn new(cfg: EnvConfig, corr: Arc<CorrelationMatrix>, episode: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = derive(cfg.seed, "episode", episode);
        let current = sample_slot(&cfg, &corr, &mut rng)?;
        Ok(Self {
            cfg,
            corr,
            rng,
            slot: 0,
            current,
        })
    }

    /// Restarts the episode with a fresh channel sequence.
    pub fn reset(&mut self, episode: u64) -> Result<&ChannelRealization> {
        self.rng = derive(self.cfg.seed, "episode", episode);
        self.current = sample_slot(&self.cfg, &self.corr, &mut self.rng)?;
        self.slot = 0;
        Ok(&self.current)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn correlation(&self) -> &Arc<CorrelationMatrix> {
        &self.corr
    }

    pub fn channel(&self) -> &ChannelRealization {
        &self.current
    }

    /// 0-based index of the current slot.
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn done(&self) -> bool {
        self.slot >= self.cfg.slots
    }

    /// Rewards `phases` on the current channel and advances to the next slot.
    pub fn step(&mut self, phases: &[f64]) -> Result<Step> {
        if self.done() {
            return Err(Error::Domain("episode already finished".into()));
        }
        if phases.len() != self.cfg.elements() {
            return Err(Error::Shape(format!("{} phases for N = {}", phases.len(), self.cfg.elements())));
        }
        let reward = mrt_rate(phases, &self.current.cascaded, self.cfg.power, self.cfg.noise_var)?;
        self.slot += 1;
        let done = self.done();
        if !done {
            self.current = sample_slot(&self.cfg, &self.corr, &mut self.rng)?;
        }
        Ok(Step { reward, done })
    }
}

/// How masks are laid out over the RIS.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MaskMode {
    #[default]
    Random,
    Grid,
}

/// Partial-observation settings shared by the imputing views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub rho: f64,
    /// Estimation SNR in dB; `None` for noiseless observations.
    pub est_snr_db: Option<f64>,
    pub mask: MaskMode,
}

impl Observation {
    pub fn noise_var(&self, entry_power: f64) -> f64 {
        match self.est_snr_db {
            Some(db) => entry_power / 10f64.powf(db / 10.0),
            None => 0.0,
        }
    }

    pub fn draw_mask(&self, elements: usize, rng: &mut impl Rng) -> MaskPattern {
        match self.mask {
            MaskMode::Random => MaskPattern::random(elements, self.rho, rng),
            MaskMode::Grid => MaskPattern::grid(elements, self.rho),
        }
    }

    /// Masks and noisy observations for a batch of channels.
    pub fn conditions(&self, channels: &[&CMatrix], entry_power: f64, rng: &mut impl Rng) -> Result<Vec<crate::diffusion::Condition>> {
        channels
            .iter()
            .map(|h| {
                let (n, m) = h.shape();
                let mask = self.draw_mask(n, rng);
                extract_condition(&vectorize(h), n, m, &mask, self.noise_var(entry_power), rng)
            })
            .collect()
    }
}

/// What a policy gets to see of the current channel.
pub trait StateView {
    fn observe(&mut self, channels: &[&CMatrix]) -> Result<Vec<CsiVector>>;

    /// Elements whose CSI had to be estimated, per slot.
    fn observed_elements(&self, elements: usize) -> usize;
}

/// The true cascaded channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectView;

impl StateView for PerfectView {
    fn observe(&mut self, channels: &[&CMatrix]) -> Result<Vec<CsiVector>> {
        Ok(channels.iter().map(|h| vectorize(h)).collect())
    }

    fn observed_elements(&self, elements: usize) -> usize {
        elements
    }
}

/// Observed rows plus independent Gaussian fill for the masked ones.
#[derive(Debug, Clone)]
pub struct RandomFillView {
    pub obs: Observation,
    /// `E|H[n,m]|²`.
    pub entry_power: f64,
    pub rng: WorkRng,
}

impl StateView for RandomFillView {
    fn observe(&mut self, channels: &[&CMatrix]) -> Result<Vec<CsiVector>> {
        let conds = self.obs.conditions(channels, self.entry_power, &mut self.rng)?;
        conds
            .iter()
            .map(|c| super::rc_impute(c, self.entry_power / 2.0, &mut self.rng))
            .collect()
    }

    fn observed_elements(&self, elements: usize) -> usize {
        crate::diffusion::observed_count(elements, self.obs.rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_correlation, RisGeometry};
    use crate::policy::returns_to_go;

    pub(crate) fn small_env(seed: u64) -> (EnvConfig, Arc<CorrelationMatrix>) {
        let geometry = RisGeometry::with_spacing_ratio(2, 2, 0.25, 0.1).unwrap();
        let corr = Arc::new(build_correlation(&geometry).unwrap());
        let cfg = EnvConfig {
            name: "t".into(),
            sigma_area: geometry.element_area(),
            geometry,
            antennas: 2,
            mu_m: vec![0.5, 0.5],
            mu_0: 0.5,
            power: 1.0,
            noise_var: 1e-6,
            slots: 5,
            seed,
            correlation: Default::default(),
        };
        (cfg, corr)
    }

    #[test]
    fn episode_has_t_rewards_matching_mrt_rate() {
        let (cfg, corr) = small_env(3);
        let mut env = BeamEnv::new(cfg.clone(), corr, 0).unwrap();
        let phases = [0.1, 0.2, -0.3, 1.0];
        let mut rewards = Vec::new();
        loop {
            let h = env.channel().cascaded.clone();
            let step = env.step(&phases).unwrap();
            assert_eq!(step.reward, mrt_rate(&phases, &h, cfg.power, cfg.noise_var).unwrap());
            rewards.push(step.reward);
            if step.done {
                break;
            }
        }
        assert_eq!(rewards.len(), cfg.slots);
        assert!(env.step(&phases).is_err());
        let total: f64 = rewards.iter().sum();
        assert!((returns_to_go(&rewards)[0] - total).abs() < 1e-12);
    }

    #[test]
    fn episodes_are_paired_by_index() {
        let (cfg, corr) = small_env(4);
        let a = BeamEnv::new(cfg.clone(), corr.clone(), 7).unwrap();
        let mut b = BeamEnv::new(cfg.clone(), corr.clone(), 1).unwrap();
        assert_ne!(a.channel(), b.channel());
        b.reset(7).unwrap();
        assert_eq!(a.channel(), b.channel());
        assert!(b.step(&[0.0; 3]).is_err());
    }

    #[test]
    fn views() {
        let (cfg, corr) = small_env(5);
        let env = BeamEnv::new(cfg.clone(), corr, 0).unwrap();
        let h = &env.channel().cascaded;
        assert_eq!(PerfectView.observe(&[h]).unwrap()[0], vectorize(h));
        let mut full = RandomFillView {
            obs: Observation {
                rho: 0.0,
                est_snr_db: None,
                mask: MaskMode::Random,
            },
            entry_power: cfg.cascaded_entry_power(),
            rng: crate::rng::stream(0, "t"),
        };
        assert_eq!(full.observe(&[h]).unwrap()[0], vectorize(h));
        assert_eq!(full.observed_elements(4), 4);
    }
}
