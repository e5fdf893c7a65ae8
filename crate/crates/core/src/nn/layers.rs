use candle_core::{Tensor, D};
use rand::Rng;

use super::{device, ParamStore};
use crate::rng::WorkRng;
use crate::Result;

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut WorkRng, dropout: f64 },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

pub fn dropout(x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train { rng, dropout } => {
            let p = *dropout;
            if p <= 0.0 {
                return Ok(x.clone());
            }
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..x.elem_count())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let mask = Tensor::from_vec(mask, x.dims(), &device())?;
            Ok((x * mask)?)
        }
    }
}

/// Applies a 2-D weight to the last axis of an arbitrary-rank input.
fn apply_last_axis(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let last = *dims.last().expect("rank >= 1");
    let rows = x.elem_count() / last;
    let y = x.reshape((rows, last))?.matmul(w)?;
    let mut out_dims = dims;
    *out_dims.last_mut().unwrap() = w.dim(1)?;
    Ok(y.reshape(out_dims)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// Stored as `(in, out)`.
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut WorkRng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[input, output], bound, rng)?;
        let bias = store.constant(format!("{name}.bias"), &[output], 0.0)?;
        Ok(Self {
            weight,
            bias: Some(bias),
        })
    }

    pub fn no_bias(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut WorkRng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[input, output], bound, rng)?;
        Ok(Self { weight, bias: None })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = apply_last_axis(x, &self.weight)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(format!("{name}.gamma"), &[width], 1.0)?,
            beta: store.constant(format!("{name}.beta"), &[width], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Lookup table with rows selected by integer ids.
#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, width: usize, rng: &mut WorkRng) -> Result<Self> {
        Ok(Self {
            table: store.normal(format!("{name}.table"), &[rows, width], 0.02, rng)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.table.dims()[0]
    }

    /// `ids` of any shape; output has an extra trailing axis of `width`.
    pub fn forward(&self, ids: &[u32], shape: &[usize]) -> Result<Tensor> {
        let idx = Tensor::from_vec(ids.to_vec(), ids.len(), &device())?;
        let rows = self.table.index_select(&idx, 0)?;
        let mut dims = shape.to_vec();
        dims.push(self.table.dim(1)?);
        Ok(rows.reshape(dims)?)
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut WorkRng) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), width, hidden, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, width, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        let h = self.up.forward(x)?.relu()?;
        let h = dropout(&h, mode)?;
        self.down.forward(&h)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut WorkRng) -> Result<Self> {
        assert!(heads > 0 && width % heads == 0, "width {width} not divisible by {heads} heads");
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, rng)?,
            k: Linear::new(store, &format!("{name}.k"), width, width, rng)?,
            v: Linear::new(store, &format!("{name}.v"), width, width, rng)?,
            o: Linear::new(store, &format!("{name}.o"), width, width, rng)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query`: (B, Lq, d); `context`: (B, Lk, d); `bias`: additive scores
    /// broadcastable to (B, 1, Lq, Lk).
    pub fn forward(&self, query: &Tensor, context: &Tensor, bias: Option<&Tensor>, mode: &mut Mode<'_>) -> Result<Tensor> {
        let (b, lq, d) = query.dims3()?;
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(context)?)?;
        let v = self.split(&self.v.forward(context)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let attn = dropout(&attn, mode)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, d))?;
        self.o.forward(&out)
    }
}

/// Pre-norm transformer block: `x + attn(LN x)`, then `x + ff(LN x)`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut WorkRng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), width, 4 * width, rng)?,
        })
    }

    /// Self-attention over `x` with an optional additive bias.
    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>, mode: &mut Mode<'_>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let a = self.attn.forward(&h, &h, bias, mode)?;
        let x = (x + dropout(&a, mode)?)?;
        let f = self.ff.forward(&self.ln2.forward(&x)?, mode)?;
        Ok((&x + dropout(&f, mode)?)?)
    }

    /// Cross-attention from `x` onto `context`, followed by the feed-forward.
    pub fn forward_cross(&self, x: &Tensor, context: &Tensor, bias: Option<&Tensor>, mode: &mut Mode<'_>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let a = self.attn.forward(&h, context, bias, mode)?;
        let x = (x + dropout(&a, mode)?)?;
        let f = self.ff.forward(&self.ln2.forward(&x)?, mode)?;
        Ok((&x + dropout(&f, mode)?)?)
    }
}

/// One-dimensional convolution along the sequence axis of a (B, L, C)
/// tensor, zero padded so the length is preserved. Odd kernel sizes only.
#[derive(Debug, Clone)]
pub struct SequenceConv {
    proj: Linear,
    kernel: usize,
}

impl SequenceConv {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, out: usize, kernel: usize, rng: &mut WorkRng) -> Result<Self> {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Ok(Self {
            proj: Linear::new(store, name, channels * kernel, out, rng)?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, c) = x.dims3()?;
        let half = self.kernel / 2;
        let mut taps = Vec::with_capacity(self.kernel);
        for k in 0..self.kernel {
            let offset = k as isize - half as isize;
            taps.push(shifted(x, offset, b, l, c)?);
        }
        let stacked = Tensor::cat(&taps, 2)?;
        self.proj.forward(&stacked)
    }
}

/// `out[:, i] = x[:, i + offset]`, zero outside the range.
fn shifted(x: &Tensor, offset: isize, b: usize, l: usize, c: usize) -> Result<Tensor> {
    if offset == 0 {
        return Ok(x.clone());
    }
    let shift = offset.unsigned_abs();
    if shift >= l {
        return Ok(Tensor::zeros((b, l, c), x.dtype(), x.device())?);
    }
    let pad = Tensor::zeros((b, shift, c), x.dtype(), x.device())?;
    if offset > 0 {
        Ok(Tensor::cat(&[x.narrow(1, shift, l - shift)?, pad], 1)?)
    } else {
        Ok(Tensor::cat(&[pad, x.narrow(1, 0, l - shift)?], 1)?)
    }
}

/// Standard transformer sinusoidal features for integer positions, as a
/// (len, width) tensor.
pub fn sinusoidal_embedding(positions: &[usize], width: usize) -> Result<Tensor> {
    let half = width / 2;
    let mut data = Vec::with_capacity(positions.len() * width);
    for &p in positions {
        for i in 0..width {
            let freq = (-(10_000f64.ln()) * (i % half) as f64 / half as f64).exp();
            let arg = p as f64 * freq;
            data.push(if i < half { arg.sin() } else { arg.cos() });
        }
    }
    Ok(Tensor::from_vec(data, (positions.len(), width), &device())?)
}

const MASKED: f64 = -1e9;

/// Additive (1, 1, L, L) bias that blocks attention to later positions.
pub fn causal_bias(len: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..len * len)
        .map(|ij| if ij % len > ij / len { MASKED } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (1, 1, len, len), &device())?)
}

/// Additive (B, 1, 1, L) bias from a key validity mask (`true` = attend).
pub fn key_padding_bias(valid: &[bool], batch: usize, len: usize) -> Result<Tensor> {
    let data: Vec<f64> = valid.iter().map(|&v| if v { 0.0 } else { MASKED }).collect();
    Ok(Tensor::from_vec(data, (batch, 1, 1, len), &device())?)
}
