use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer as _, ParamsAdamW};
use rand::Rng;
use safetensors::tensor::{Dtype as StDtype, TensorView};

use super::device;
use crate::rng::{standard_normal, WorkRng};
use crate::{Error, Result};

/// Named trainable arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Shape(format!("parameter {name} registered twice")));
        }
        let t = Tensor::from_vec(values, shape, &device())?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut WorkRng) -> Result<Tensor> {
        let len = shape.iter().product();
        let values = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name.into(), shape, values)
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut WorkRng) -> Result<Tensor> {
        let len = shape.iter().product();
        let values = (0..len).map(|_| standard_normal(rng) * std).collect();
        self.insert(name.into(), shape, values)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Tensor> {
        let len = shape.iter().product();
        self.insert(name.into(), shape, vec![value; len])
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Variables whose name starts with one of `prefixes`.
    pub fn vars_with_prefix(&self, prefixes: &[&str]) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Flat copies of every array, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().flatten_all()?.to_vec1::<f64>()?)))
            .collect()
    }

    /// Serialises all arrays as little-endian f64 safetensors with the given
    /// string metadata.
    pub fn to_safetensors(&self, metadata: HashMap<String, String>) -> Result<Vec<u8>> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            let values = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((name.clone(), var.dims().to_vec(), bytes));
        }
        let views: Vec<(String, TensorView<'_>)> = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(StDtype::F64, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Shape(e.to_string()))
            })
            .collect::<Result<_>>()?;
        safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Shape(e.to_string()))
    }

    /// Overwrites every registered array from a safetensors blob. Names and
    /// shapes must match exactly.
    pub fn load_safetensors(&self, bytes: &[u8], origin: &std::path::Path) -> Result<()> {
        let st = safetensors::SafeTensors::deserialize(bytes).map_err(|e| Error::format(origin, e.to_string()))?;
        let mut names: Vec<String> = st.names().into_iter().map(String::from).collect();
        names.sort();
        let expected: Vec<&String> = self.vars.keys().collect();
        if names.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(origin, "parameter names do not match the model"));
        }
        for (name, var) in &self.vars {
            let view = st.tensor(name).map_err(|e| Error::format(origin, e.to_string()))?;
            if view.dtype() != StDtype::F64 || view.shape() != var.dims() {
                return Err(Error::format(origin, format!("parameter {name} has wrong dtype or shape")));
            }
            let values: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            var.set(&Tensor::from_vec(values, var.dims(), &device())?)?;
        }
        Ok(())
    }
}

/// Reads the string metadata block of a safetensors blob.
pub fn read_safetensors_metadata(bytes: &[u8], origin: &std::path::Path) -> Result<HashMap<String, String>> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::format(origin, e.to_string()))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            total += g.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for v in vars {
            if let Some(g) = grads.get(v) {
                let scaled = (g * scale)?;
                grads.insert(v, scaled);
            }
        }
    }
    Ok(norm)
}

/// AdamW over a fixed set of variables, with optional gradient clipping.
pub struct Optimizer {
    inner: AdamW,
    vars: Vec<Var>,
    clip: Option<f64>,
}

impl Optimizer {
    pub fn adamw(vars: Vec<Var>, learning_rate: f64, weight_decay: f64, clip: Option<f64>) -> Result<Self> {
        let params = ParamsAdamW {
            lr: learning_rate,
            weight_decay,
            ..Default::default()
        };
        let inner = AdamW::new(vars.clone(), params)?;
        Ok(Self { inner, vars, clip })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.inner.set_learning_rate(lr);
    }

    /// Backpropagates `loss` and applies one update.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let mut grads = loss.backward()?;
        if let Some(max) = self.clip {
            clip_grad_norm(&mut grads, &self.vars, max)?;
        }
        self.inner.step(&grads)?;
        Ok(())
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
