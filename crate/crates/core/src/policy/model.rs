use std::collections::HashMap;
use std::path::Path;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::diffusion::CsiVector;
use crate::nn::{causal_bias, device, dropout, read_safetensors_metadata, Embedding, LayerNorm, Linear, Mode, ParamStore, TransformerBlock};
use crate::rng::WorkRng;
use crate::{Error, Result};

pub const DT_SCHEMA_VERSION: u32 = 1;
const META_KEY: &str = "dedt.dt";
/// Parameters with this prefix form the action head.
pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtConfig {
    pub elements: usize,
    pub antennas: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Context window in timesteps.
    pub window: usize,
    pub max_timestep: usize,
    /// Size of the environment-tag vocabulary.
    pub num_tags: usize,
    /// Returns-to-go are divided by this before embedding.
    pub return_scale: f64,
}

impl DtConfig {
    /// Three blocks of width 256 with dropout 0.1.
    pub fn paper(elements: usize, antennas: usize) -> Self {
        Self {
            elements,
            antennas,
            width: 256,
            blocks: 3,
            heads: 4,
            dropout: 0.1,
            window: 20,
            max_timestep: 64,
            num_tags: 16,
            return_scale: 100.0,
        }
    }

    pub fn desk(elements: usize, antennas: usize) -> Self {
        Self {
            width: 64,
            window: 4,
            ..Self::paper(elements, antennas)
        }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.elements * self.antennas
    }

    pub fn action_dim(&self) -> usize {
        2 * self.elements
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::Config(s));
        if self.elements == 0 || self.antennas == 0 || self.blocks == 0 || self.window == 0 {
            return bad("decision transformer needs N, M, blocks, window >= 1".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.return_scale > 0.0) {
            return bad("dropout must lie in [0, 1) and return_scale be positive".into());
        }
        if self.max_timestep == 0 || self.num_tags == 0 {
            return bad("max_timestep and num_tags must be >= 1".into());
        }
        Ok(())
    }
}

/// Which recent timesteps enter the context for a prefix of `prefix_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenWindow {
    pub start: usize,
    pub len: usize,
}

impl TokenWindow {
    /// `(R̂, s, a)` per step minus the action still to be predicted; the
    /// environment-tag token is not counted.
    pub fn token_count(&self) -> usize {
        3 * self.len - 1
    }
}

pub fn encode_tokens(prefix_len: usize, window: usize) -> Result<TokenWindow> {
    if prefix_len == 0 || window == 0 {
        return Err(Error::Shape("token window needs a non-empty prefix and window".into()));
    }
    let len = prefix_len.min(window);
    Ok(TokenWindow {
        start: prefix_len - len,
        len,
    })
}

/// Scales a state to unit RMS so the policy sees channel shape, not level.
pub fn normalize_state(state: &[f64]) -> Vec<f64> {
    let rms = (state.iter().map(|v| v * v).sum::<f64>() / state.len().max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        state.iter().map(|v| v / rms).collect()
    } else {
        vec![0.0; state.len()]
    }
}

/// Equal-length context windows for a batch.
#[derive(Debug, Clone)]
pub struct DtInputs {
    pub batch: usize,
    pub len: usize,
    /// (B, L) raw returns-to-go.
    pub returns: Vec<f64>,
    /// (B, L, 2NM) raw states.
    pub states: Vec<f64>,
    /// (B, L, 2N); the last step's action is never attended to.
    pub actions: Vec<f64>,
    /// (B, L), 0-based slot index.
    pub timesteps: Vec<usize>,
    /// (B).
    pub tags: Vec<u32>,
}

impl DtInputs {
    pub fn new(batch: usize, len: usize) -> Self {
        Self {
            batch,
            len,
            returns: Vec::with_capacity(batch * len),
            states: Vec::new(),
            actions: Vec::new(),
            timesteps: Vec::with_capacity(batch * len),
            tags: Vec::with_capacity(batch),
        }
    }

    /// Appends one sample's window; `actions` may omit the final step.
    pub fn push(&mut self, tag: u32, returns: &[f64], states: &[&CsiVector], actions: &[&[f64]], first_timestep: usize, action_dim: usize) {
        self.tags.push(tag);
        for i in 0..self.len {
            self.returns.push(returns[i]);
            self.states.extend(normalize_state(states[i].as_slice()));
            match actions.get(i) {
                Some(a) => self.actions.extend_from_slice(a),
                None => self.actions.extend(std::iter::repeat_n(0.0, action_dim)),
            }
            self.timesteps.push(first_timestep + i);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtTrainingInfo {
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub seed: u64,
    pub fine_tune_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtMeta {
    pub schema_version: u32,
    pub config: DtConfig,
    pub training: DtTrainingInfo,
}

#[derive(Debug, Clone)]
pub struct DecisionTransformer {
    cfg: DtConfig,
    store: ParamStore,
    embed_return: Linear,
    embed_state: Linear,
    embed_action: Linear,
    timestep: Embedding,
    tag: Embedding,
    embed_norm: LayerNorm,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
    head: Linear,
    pub training: DtTrainingInfo,
}

impl DecisionTransformer {
    pub fn new(cfg: DtConfig, rng: &mut WorkRng) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let d = cfg.width;
        let embed_return = Linear::new(&mut s, "embed.return", 1, d, rng)?;
        let embed_state = Linear::new(&mut s, "embed.state", cfg.state_dim(), d, rng)?;
        let embed_action = Linear::new(&mut s, "embed.action", cfg.action_dim(), d, rng)?;
        let timestep = Embedding::new(&mut s, "embed.timestep", cfg.max_timestep, d, rng)?;
        let tag = Embedding::new(&mut s, "embed.tag", cfg.num_tags, d, rng)?;
        let embed_norm = LayerNorm::new(&mut s, "embed.norm", d)?;
        let blocks = (0..cfg.blocks)
            .map(|i| TransformerBlock::new(&mut s, &format!("block.{i}"), d, cfg.heads, rng))
            .collect::<Result<_>>()?;
        let final_norm = LayerNorm::new(&mut s, "final.norm", d)?;
        let head = Linear::new(&mut s, &format!("{HEAD_PREFIX}out"), d, cfg.action_dim(), rng)?;
        Ok(Self {
            cfg,
            store: s,
            embed_return,
            embed_state,
            embed_action,
            timestep,
            tag,
            embed_norm,
            blocks,
            final_norm,
            head,
            training: DtTrainingInfo {
                iterations: 0,
                final_loss: None,
                seed: 0,
                fine_tune_steps: 0,
            },
        })
    }

    pub fn config(&self) -> &DtConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Unit-norm action pairs predicted at every state position, (B, L, 2N).
    pub fn forward(&self, inputs: &DtInputs, mode: &mut Mode<'_>) -> Result<Tensor> {
        let (b, l, d) = (inputs.batch, inputs.len, self.cfg.width);
        let (sd, ad) = (self.cfg.state_dim(), self.cfg.action_dim());
        if inputs.tags.len() != b
            || inputs.returns.len() != b * l
            || inputs.states.len() != b * l * sd
            || inputs.actions.len() != b * l * ad
            || inputs.timesteps.len() != b * l
        {
            return Err(Error::Shape("decision transformer inputs do not match (B, L, N, M)".into()));
        }
        if l == 0 || l > self.cfg.window {
            return Err(Error::Shape(format!("context of {l} steps for window {}", self.cfg.window)));
        }
        if let Some(&tag) = inputs.tags.iter().find(|&&t| t as usize >= self.cfg.num_tags) {
            return Err(Error::Shape(format!("environment tag {tag} outside the vocabulary")));
        }
        let dev = device();
        let scaled: Vec<f64> = inputs.returns.iter().map(|r| r / self.cfg.return_scale).collect();
        let returns = Tensor::from_vec(scaled, (b, l, 1), &dev)?;
        let states = Tensor::from_vec(inputs.states.clone(), (b, l, sd), &dev)?;
        let actions = Tensor::from_vec(inputs.actions.clone(), (b, l, ad), &dev)?;
        let ids: Vec<u32> = inputs
            .timesteps
            .iter()
            .map(|&t| t.min(self.cfg.max_timestep - 1) as u32)
            .collect();
        let time = self.timestep.forward(&ids, &[b, l])?;

        let r = self.embed_return.forward(&returns)?.add(&time)?;
        let s = self.embed_state.forward(&states)?.add(&time)?;
        let a = self.embed_action.forward(&actions)?.add(&time)?;
        let seq = Tensor::stack(&[r, s, a], 2)?.reshape((b, 3 * l, d))?.narrow(1, 0, 3 * l - 1)?;
        let tag = self.tag.forward(&inputs.tags, &[b, 1])?;
        let seq = Tensor::cat(&[tag, seq], 1)?;
        let mut h = dropout(&self.embed_norm.forward(&seq)?, mode)?;
        let bias = causal_bias(3 * l)?;
        for block in &self.blocks {
            h = block.forward(&h, Some(&bias), mode)?;
        }
        let h = self.final_norm.forward(&h)?;
        // [tag, R_1, s_1, a_1, ...]: s_t sits at 3t + 2 (0-based t)
        let at_states = h.reshape((b, l, 3, d))?.narrow(2, 2, 1)?.squeeze(2)?;
        let raw = self.head.forward(&at_states)?;
        let pairs = raw.reshape((b, l, self.cfg.elements, 2))?;
        let norm = (pairs.sqr()?.sum_keepdim(D::Minus1)? + 1e-24)?.sqrt()?;
        Ok(pairs.broadcast_div(&norm)?.reshape((b, l, ad))?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = DtMeta {
            schema_version: DT_SCHEMA_VERSION,
            config: self.cfg,
            training: self.training.clone(),
        };
        let json = serde_json::to_string(&meta).map_err(|e| Error::Shape(e.to_string()))?;
        self.store.to_safetensors(HashMap::from([(META_KEY.to_string(), json)]))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let map = read_safetensors_metadata(bytes, origin)?;
        let json = map
            .get(META_KEY)
            .ok_or_else(|| Error::format(origin, "not a decision-transformer checkpoint"))?;
        let meta: DtMeta = serde_json::from_str(json).map_err(|e| Error::format(origin, e.to_string()))?;
        if meta.schema_version != DT_SCHEMA_VERSION {
            return Err(Error::format(origin, format!("schema version {}", meta.schema_version)));
        }
        let mut model = Self::new(meta.config, &mut crate::rng::stream(0, "init"))?;
        model.store.load_safetensors(bytes, origin)?;
        model.training = meta.training;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        Self::from_bytes(&crate::harness::container::read_file(path)?, path)
    }

    /// Predicted pairs for the last step of every sample, (B, 2N) flattened.
    pub fn predict_last(&self, inputs: &DtInputs) -> Result<Vec<Vec<f64>>> {
        let out = self.forward(inputs, &mut Mode::Eval)?;
        let last = out.narrow(1, inputs.len - 1, 1)?.squeeze(1)?;
        Ok(last.to_vec2::<f64>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream};

    fn small() -> DecisionTransformer {
        let cfg = DtConfig {
            width: 32,
            blocks: 2,
            window: 5,
            dropout: 0.1,
            ..DtConfig::desk(4, 2)
        };
        DecisionTransformer::new(cfg, &mut stream(0, "init")).unwrap()
    }

    fn inputs(len: usize, seed: u64) -> DtInputs {
        let mut r = stream(seed, "t");
        let states: Vec<CsiVector> = (0..len).map(|_| CsiVector(normal_vec(&mut r, 16))).collect();
        let actions: Vec<Vec<f64>> = (0..len).map(|_| crate::policy::pairs_from_phases(&normal_vec(&mut r, 4))).collect();
        let returns: Vec<f64> = (0..len).map(|t| 10.0 - t as f64).collect();
        let mut inp = DtInputs::new(1, len);
        let srefs: Vec<&CsiVector> = states.iter().collect();
        let arefs: Vec<&[f64]> = actions.iter().map(Vec::as_slice).collect();
        inp.push(1, &returns, &srefs, &arefs, 0, 8);
        inp
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(encode_tokens(1, 20).unwrap().token_count(), 2);
        assert_eq!(encode_tokens(5, 3).unwrap(), TokenWindow { start: 2, len: 3 });
        assert_eq!(encode_tokens(5, 3).unwrap().token_count(), 8);
        assert_eq!(encode_tokens(4, 10).unwrap(), TokenWindow { start: 0, len: 4 });
        assert!(encode_tokens(0, 3).is_err());
    }

    #[test]
    fn outputs_are_unit_pairs_and_deterministic() {
        let m = small();
        let inp = inputs(5, 1);
        let a: Vec<Vec<Vec<f64>>> = m.forward(&inp, &mut Mode::Eval).unwrap().to_vec3().unwrap();
        for row in &a[0] {
            for p in row.chunks_exact(2) {
                assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-9);
            }
        }
        let b: Vec<Vec<Vec<f64>>> = m.forward(&inp, &mut Mode::Eval).unwrap().to_vec3().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_are_causal() {
        let m = small();
        let full = inputs(5, 2);
        let out: Vec<Vec<f64>> = m.forward(&full, &mut Mode::Eval).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        for t in 0..5 {
            let mut pre = DtInputs::new(1, t + 1);
            pre.tags = full.tags.clone();
            pre.returns = full.returns[..=t].to_vec();
            pre.states = full.states[..(t + 1) * 16].to_vec();
            pre.actions = full.actions[..(t + 1) * 8].to_vec();
            pre.timesteps = full.timesteps[..=t].to_vec();
            let p: Vec<Vec<f64>> = m.forward(&pre, &mut Mode::Eval).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
            for (u, v) in p[t].iter().zip(&out[t]) {
                assert!((u - v).abs() < 1e-6);
            }
        }
        // changing the current action must not move the current prediction
        let mut changed = full.clone();
        for v in &mut changed.actions[4 * 8..] {
            *v = -*v + 3.0;
        }
        let c: Vec<Vec<f64>> = m.forward(&changed, &mut Mode::Eval).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(c[4], out[4]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small();
        let bytes = m.to_bytes().unwrap();
        let back = DecisionTransformer::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back.params().snapshot().unwrap(), m.params().snapshot().unwrap());
        assert_eq!(back.config(), m.config());
        assert!(DecisionTransformer::from_bytes(&bytes[..100], Path::new("m")).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = small();
        let mut inp = inputs(3, 4);
        inp.tags[0] = 99;
        assert!(m.forward(&inp, &mut Mode::Eval).is_err());
        assert!(m.forward(&inputs(6, 4), &mut Mode::Eval).is_err());
    }
}
