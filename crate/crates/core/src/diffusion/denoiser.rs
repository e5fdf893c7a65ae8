use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::Condition;
use crate::nn::{
    device, key_padding_bias, sinusoidal_embedding, Embedding, LayerNorm, Linear, Mode,
    ParamStore, SequenceConv, TransformerBlock,
};
use crate::rng::WorkRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// RIS elements `N`.
    pub elements: usize,
    /// BS antennas `M`.
    pub antennas: usize,
    pub width: usize,
    pub heads: usize,
    /// Self-attention blocks after the cross-attention block.
    pub layers: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl DenoiserConfig {
    pub fn desk(elements: usize, antennas: usize) -> Self {
        Self {
            elements,
            antennas,
            width: 64,
            heads: 4,
            layers: 2,
            kernel: 3,
            dropout: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.elements * self.antennas
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements == 0 || self.antennas == 0 {
            return Err(Error::Config("denoiser needs N, M >= 1".into()));
        }
        if self.heads == 0 || self.width % self.heads != 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "width {} must be even and divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("conv kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {}", self.dropout)));
        }
        Ok(())
    }
}

/// A batch of conditions in padded tensor form.
///
/// The condition sequence of every sample starts with a learned null token
/// so a fully masked sample still has something to attend to.
#[derive(Debug, Clone)]
pub struct ConditionBatch {
    batch: usize,
    /// (B, N, 2M) observed rows in place, zeros elsewhere.
    zero_filled: Tensor,
    /// (B, N, 1).
    indicator: Tensor,
    /// (B, L, 2M), L = 1 + max observed count.
    tokens: Tensor,
    /// Element id per condition slot; `N` marks the null token.
    ids: Vec<u32>,
    len: usize,
    /// (B, 1, 1, L).
    key_bias: Tensor,
}

impl ConditionBatch {
    pub fn new(conditions: &[Condition], elements: usize, antennas: usize) -> Result<Self> {
        if conditions.is_empty() {
            return Err(Error::Shape("empty condition batch".into()));
        }
        let w = 2 * antennas;
        let batch = conditions.len();
        let len = 1 + conditions.iter().map(|c| c.observed.len()).max().unwrap_or(0);
        let mut zero_filled = Vec::with_capacity(batch * elements * w);
        let mut indicator = Vec::with_capacity(batch * elements);
        let mut tokens = vec![0.0; batch * len * w];
        let mut ids = vec![0u32; batch * len];
        let mut valid = vec![false; batch * len];
        for (b, c) in conditions.iter().enumerate() {
            if c.elements != elements || c.antennas != antennas {
                return Err(Error::Shape(format!(
                    "condition for N = {}, M = {} in a model for N = {elements}, M = {antennas}",
                    c.elements, c.antennas
                )));
            }
            zero_filled.extend(c.zero_filled());
            indicator.extend(c.indicator());
            ids[b * len] = elements as u32;
            valid[b * len] = true;
            for (j, &n) in c.observed.iter().enumerate() {
                let slot = b * len + 1 + j;
                ids[slot] = n as u32;
                valid[slot] = true;
                tokens[slot * w..(slot + 1) * w].copy_from_slice(c.token(j));
            }
        }
        let dev = device();
        Ok(Self {
            batch,
            zero_filled: Tensor::from_vec(zero_filled, (batch, elements, w), &dev)?,
            indicator: Tensor::from_vec(indicator, (batch, elements, 1), &dev)?,
            tokens: Tensor::from_vec(tokens, (batch, len, w), &dev)?,
            ids,
            len,
            key_bias: key_padding_bias(&valid, batch, len)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Anything that predicts the injected noise from `(x_k, condition, k)`.
pub trait NoisePredictor {
    fn elements(&self) -> usize;
    fn antennas(&self) -> usize;
    /// `x_k`: (B, 2NM); returns (B, 2NM).
    fn predict(&self, x_k: &Tensor, cond: &ConditionBatch, steps: &[usize], mode: &mut Mode<'_>) -> Result<Tensor>;
    fn store(&self) -> Option<&ParamStore> {
        None
    }
}

/// Element-token transformer denoiser.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    store: ParamStore,
    input: Linear,
    element_pos: Tensor,
    step_up: Linear,
    step_down: Linear,
    cond_in: Linear,
    cond_pos: Embedding,
    cross: TransformerBlock,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    conv: SequenceConv,
    out: Linear,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, rng: &mut WorkRng) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let (n, w, d) = (cfg.elements, 2 * cfg.antennas, cfg.width);
        let input = Linear::new(&mut s, "input", 2 * w + 1, d, rng)?;
        let element_pos = s.normal("element_pos", &[n, d], 0.02, rng)?;
        let step_up = Linear::new(&mut s, "step.up", d, d, rng)?;
        let step_down = Linear::new(&mut s, "step.down", d, d, rng)?;
        let cond_in = Linear::new(&mut s, "cond.input", w, d, rng)?;
        let cond_pos = Embedding::new(&mut s, "cond.pos", n + 1, d, rng)?;
        let cross = TransformerBlock::new(&mut s, "cross", d, cfg.heads, rng)?;
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::new(&mut s, &format!("spatial.{i}"), d, cfg.heads, rng))
            .collect::<Result<_>>()?;
        let norm = LayerNorm::new(&mut s, "head.norm", d)?;
        let conv = SequenceConv::new(&mut s, "head.conv", d, d, cfg.kernel, rng)?;
        let out = Linear::new(&mut s, "head.out", d, w, rng)?;
        Ok(Self {
            cfg,
            store: s,
            input,
            element_pos,
            step_up,
            step_down,
            cond_in,
            cond_pos,
            cross,
            blocks,
            norm,
            conv,
            out,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// (B, 2NM) in CSI-vector layout to (B, N, 2M) element tokens.
    fn to_tokens(&self, x: &Tensor) -> Result<Tensor> {
        let (n, m) = (self.cfg.elements, self.cfg.antennas);
        let b = x.dim(0)?;
        Ok(x.reshape((b, 2, m, n))?.permute((0, 3, 1, 2))?.reshape((b, n, 2 * m))?)
    }

    fn from_tokens(&self, t: &Tensor) -> Result<Tensor> {
        let (n, m) = (self.cfg.elements, self.cfg.antennas);
        let b = t.dim(0)?;
        Ok(t.reshape((b, n, 2, m))?.permute((0, 2, 3, 1))?.reshape((b, 2 * n * m))?)
    }
}

impl NoisePredictor for Denoiser {
    fn elements(&self) -> usize {
        self.cfg.elements
    }

    fn antennas(&self) -> usize {
        self.cfg.antennas
    }

    fn store(&self) -> Option<&ParamStore> {
        Some(&self.store)
    }

    fn predict(&self, x_k: &Tensor, cond: &ConditionBatch, steps: &[usize], mode: &mut Mode<'_>) -> Result<Tensor> {
        let (b, dim) = x_k.dims2()?;
        if dim != self.cfg.dim() || b != cond.batch || steps.len() != b {
            return Err(Error::Shape(format!(
                "x_k is {b}x{dim}, condition batch {}, {} steps, model dim {}",
                cond.batch,
                steps.len(),
                self.cfg.dim()
            )));
        }
        let tokens = Tensor::cat(&[self.to_tokens(x_k)?, cond.zero_filled.clone(), cond.indicator.clone()], 2)?;
        let step = sinusoidal_embedding(steps, self.cfg.width)?;
        let step = self.step_down.forward(&self.step_up.forward(&step)?.relu()?)?.unsqueeze(1)?;
        let h = self
            .input
            .forward(&tokens)?
            .broadcast_add(&self.element_pos)?
            .broadcast_add(&step)?;

        let c = self.cond_in.forward(&cond.tokens)?;
        let c = (c + self.cond_pos.forward(&cond.ids, &[b, cond.len])?)?;
        let mut h = self.cross.forward_cross(&h, &c, Some(&cond.key_bias), mode)?;
        for block in &self.blocks {
            h = block.forward(&h, None, mode)?;
        }
        let h = self.norm.forward(&h)?;
        let h = (&h + self.conv.forward(&h)?.relu()?)?;
        self.from_tokens(&self.out.forward(&h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{extract_condition, CsiVector, MaskPattern};
    use crate::rng::{self, normal_vec};

    fn setup() -> (Denoiser, Vec<f64>, Condition) {
        let mut r = rng::stream(0, "init");
        let mut cfg = DenoiserConfig::desk(16, 2);
        cfg.width = 32;
        let model = Denoiser::new(cfg, &mut r).unwrap();
        let x = CsiVector(normal_vec(&mut r, 64));
        let mask = MaskPattern::random(16, 0.5, &mut r);
        let cond = extract_condition(&x, 16, 2, &mask, 0.0, &mut r).unwrap();
        (model, normal_vec(&mut r, 64), cond)
    }

    fn run(model: &Denoiser, x: &[f64], cond: &Condition) -> Vec<f64> {
        let xt = Tensor::from_vec(x.to_vec(), (1, 64), &device()).unwrap();
        let cb = ConditionBatch::new(std::slice::from_ref(cond), 16, 2).unwrap();
        model
            .predict(&xt, &cb, &[7], &mut Mode::Eval)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap()
    }

    #[test]
    fn output_shape_and_determinism() {
        let (model, x, cond) = setup();
        let a = run(&model, &x, &cond);
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, run(&model, &x, &cond));
    }

    #[test]
    fn token_layout_round_trips() {
        let (model, x, _) = setup();
        let xt = Tensor::from_vec(x.clone(), (1, 64), &device()).unwrap();
        let tok = model.to_tokens(&xt).unwrap();
        let row3: Vec<f64> = tok.get(0).unwrap().get(3).unwrap().to_vec1().unwrap();
        assert_eq!(row3, CsiVector(x.clone()).element_token(16, 2, 3));
        let back = model.from_tokens(&tok).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn condition_order_does_not_matter() {
        let (model, x, cond) = setup();
        let a = run(&model, &x, &cond);
        let w = 4;
        let p = cond.observed.len();
        let mut shuffled = cond.clone();
        shuffled.observed.reverse();
        shuffled.tokens = (0..p).rev().flat_map(|j| cond.tokens[j * w..(j + 1) * w].to_vec()).collect();
        let b = run(&model, &x, &shuffled);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_padding_matches_single_samples() {
        let (model, x, cond) = setup();
        let empty = Condition {
            elements: 16,
            antennas: 2,
            observed: Vec::new(),
            tokens: Vec::new(),
        };
        let xs: Vec<f64> = x.iter().chain(&x).copied().collect();
        let xt = Tensor::from_vec(xs, (2, 64), &device()).unwrap();
        let cb = ConditionBatch::new(&[cond.clone(), empty.clone()], 16, 2).unwrap();
        let both = model.predict(&xt, &cb, &[7, 7], &mut Mode::Eval).unwrap();
        let second: Vec<f64> = both.get(1).unwrap().to_vec1().unwrap();
        let single = run(&model, &x, &empty);
        for (u, v) in second.iter().zip(&single) {
            assert!((u - v).abs() < 1e-9);
        }
        let first: Vec<f64> = both.get(0).unwrap().to_vec1().unwrap();
        for (u, v) in first.iter().zip(&run(&model, &x, &cond)) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_wrong_shapes() {
        let (model, _, cond) = setup();
        let xt = Tensor::zeros((1, 32), crate::nn::DTYPE, &device()).unwrap();
        let cb = ConditionBatch::new(&[cond], 16, 2).unwrap();
        assert!(model.predict(&xt, &cb, &[1], &mut Mode::Eval).is_err());
    }
}
