use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{Condition, ConditionBatch, CsiVector, Denoiser, DenoiserConfig, NoisePredictor, NoiseSchedule, ScheduleSpec};
use crate::nn::{device, read_safetensors_metadata, Mode};
use crate::rng::{normal_vec, WorkRng};
use crate::{Error, Result};

pub const DM_SCHEMA_VERSION: u32 = 1;
const META_KEY: &str = "dedt.dm";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub steps: usize,
    pub final_loss: f64,
    pub seed: u64,
    /// Loss on a fixed validation batch right after training.
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerMeta {
    pub schema_version: u32,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub rows: usize,
    pub cols: usize,
    /// RMS of the training entries; data are divided by it before diffusion.
    pub scale: f64,
    pub training: TrainingInfo,
}

/// Reverse diffusion from `x_K ~ N(0, I)` down to `x_0` for a batch of
/// conditions, in the model's (normalised) units.
pub fn impute_batch<P: NoisePredictor>(
    model: &P,
    conds: &[Condition],
    sched: &NoiseSchedule,
    rng: &mut WorkRng,
) -> Result<Vec<CsiVector>> {
    if conds.is_empty() {
        return Ok(Vec::new());
    }
    let (n, m) = (model.elements(), model.antennas());
    let dim = 2 * n * m;
    let b = conds.len();
    let cb = ConditionBatch::new(conds, n, m)?;
    let mut x = normal_vec(rng, b * dim);
    for k in (1..=sched.steps()).rev() {
        let xt = Tensor::from_vec(x.clone(), (b, dim), &device())?;
        let eps = model.predict(&xt, &cb, &vec![k; b], &mut Mode::Eval)?.flatten_all()?.to_vec1::<f64>()?;
        let z = if k > 1 { normal_vec(rng, b * dim) } else { Vec::new() };
        x = super::reverse_step_with_noise(&x, &eps, k, sched, &z)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Imputation(format!("non-finite state at diffusion step {k}")));
        }
    }
    Ok(x.chunks_exact(dim).map(|c| CsiVector(c.to_vec())).collect())
}

pub fn impute_csi<P: NoisePredictor>(
    model: &P,
    cond: &Condition,
    sched: &NoiseSchedule,
    rng: &mut WorkRng,
) -> Result<CsiVector> {
    Ok(impute_batch(model, std::slice::from_ref(cond), sched, rng)?.remove(0))
}

/// A trained denoiser with its schedule and data scale.
#[derive(Debug, Clone)]
pub struct Imputer {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub meta: ImputerMeta,
}

impl Imputer {
    pub fn new(model: Denoiser, schedule: NoiseSchedule, rows: usize, cols: usize, scale: f64, training: TrainingInfo) -> Result<Self> {
        if rows * cols != model.config().elements {
            return Err(Error::Shape(format!("{rows}x{cols} RIS for a model with N = {}", model.config().elements)));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("data scale {scale}")));
        }
        let meta = ImputerMeta {
            schema_version: DM_SCHEMA_VERSION,
            denoiser: *model.config(),
            schedule: schedule.spec(),
            rows,
            cols,
            scale,
            training,
        };
        Ok(Self { model, schedule, meta })
    }

    pub fn elements(&self) -> usize {
        self.meta.denoiser.elements
    }

    pub fn antennas(&self) -> usize {
        self.meta.denoiser.antennas
    }

    /// Imputes in physical units: conditions are scaled down by the stored
    /// scale and results scaled back up.
    pub fn impute(&self, conds: &[Condition], rng: &mut WorkRng) -> Result<Vec<CsiVector>> {
        let inv = 1.0 / self.meta.scale;
        let scaled: Vec<Condition> = conds.iter().map(|c| c.scaled(inv)).collect();
        Ok(impute_batch(&self.model, &scaled, &self.schedule, rng)?
            .into_iter()
            .map(|x| x.scaled(self.meta.scale))
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_string(&self.meta).map_err(|e| Error::Shape(e.to_string()))?;
        self.model.params().to_safetensors(HashMap::from([(META_KEY.to_string(), json)]))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let meta_map = read_safetensors_metadata(bytes, origin)?;
        let json = meta_map
            .get(META_KEY)
            .ok_or_else(|| Error::format(origin, "not a diffusion checkpoint"))?;
        let meta: ImputerMeta = serde_json::from_str(json).map_err(|e| Error::format(origin, e.to_string()))?;
        if meta.schema_version != DM_SCHEMA_VERSION {
            return Err(Error::format(origin, format!("schema version {}", meta.schema_version)));
        }
        // initial values are overwritten by the stored arrays
        let model = Denoiser::new(meta.denoiser, &mut crate::rng::stream(0, "init"))?;
        model.params().load_safetensors(bytes, origin)?;
        let schedule = NoiseSchedule::from_spec(meta.schedule)?;
        Ok(Self { model, schedule, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
