//! Small neural-network toolkit on top of candle: seeded parameter
//! initialization, named parameter stores, convolution/linear layers and
//! the tensor helpers shared by the diffusion, embedding and segmentation
//! models.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat, dtype-independent copy of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.dims().to_vec();
        let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(Self { shape, data })
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let expected: usize = self.shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Checkpoint(format!(
                "record of shape {:?} holds {} values",
                self.shape,
                self.data.len()
            )));
        }
        Ok(
            Tensor::from_vec(self.data.clone(), self.shape.as_slice(), &Device::Cpu)?
                .to_dtype(dtype)?,
        )
    }
}

/// Ordered collection of named trainable variables.
///
/// Iteration order is lexicographic by name so serialization and optimizer
/// state layout never depend on insertion order.
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Independent copy: new variables holding copies of the current values.
    pub fn deep_copy(&self) -> Result<Self> {
        let mut out = ParamStore::new();
        for (name, var) in &self.vars {
            out.insert(name.clone(), Var::from_tensor(&var.as_tensor().copy()?)?);
        }
        Ok(out)
    }

    pub fn to_records(&self) -> Result<BTreeMap<String, TensorRecord>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), TensorRecord::from_tensor(v.as_tensor())?)))
            .collect()
    }

    pub fn from_records(records: &BTreeMap<String, TensorRecord>, dtype: DType) -> Result<Self> {
        let mut out = ParamStore::new();
        for (name, rec) in records {
            out.insert(name.clone(), Var::from_tensor(&rec.to_tensor(dtype)?)?);
        }
        Ok(out)
    }

    /// Checks that this store has exactly the names and shapes of `reference`.
    pub fn check_layout(&self, reference: &ParamStore) -> Result<()> {
        for (name, var) in &reference.vars {
            let mine = self.get(name)?;
            if mine.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    mine.dims(),
                    var.dims()
                )));
            }
        }
        if self.vars.len() != reference.vars.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.vars.len(),
                reference.vars.len()
            )));
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

/// Seeded initializer writing freshly sampled variables into a store.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub dtype: DType,
}

impl Init<'_> {
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Var> {
        Ok(Var::zeros(shape, self.dtype, &Device::Cpu)?)
    }
}

/// Draws a standard-normal tensor from a seeded generator.
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Returns the tensor of a variable, either graph-tracked (trainable) or
/// detached (frozen: gradients still flow to inputs, never to the weight).
fn param(var: &Var, trainable: bool) -> Tensor {
    if trainable {
        var.as_tensor().clone()
    } else {
        var.as_tensor().detach()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        scale: f64,
    ) -> Result<()> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let bound = scale / fan_in.sqrt();
        store.insert(
            format!("{name}.weight"),
            init.uniform(&[c_out, c_in, kernel, kernel], bound)?,
        );
        store.insert(format!("{name}.bias"), init.zeros(&[c_out])?);
        Ok(())
    }

    pub fn load(
        store: &ParamStore,
        name: &str,
        stride: usize,
        padding: usize,
        trainable: bool,
    ) -> Result<Self> {
        Ok(Self {
            weight: param(store.get(&format!("{name}.weight"))?, trainable),
            bias: param(store.get(&format!("{name}.bias"))?, trainable),
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        d_in: usize,
        d_out: usize,
        scale: f64,
    ) -> Result<()> {
        let bound = scale / (d_in as f64).sqrt();
        store.insert(
            format!("{name}.weight"),
            init.uniform(&[d_out, d_in], bound)?,
        );
        store.insert(format!("{name}.bias"), init.zeros(&[d_out])?);
        Ok(())
    }

    pub fn load(store: &ParamStore, name: &str, trainable: bool) -> Result<Self> {
        Ok(Self {
            weight: param(store.get(&format!("{name}.weight"))?, trainable),
            bias: param(store.get(&format!("{name}.bias"))?, trainable),
        })
    }

    /// `x`: [n, d_in] -> [n, d_out]
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Sinusoidal embedding of integer timesteps, shape [n, dim].
pub fn timestep_embedding(ts: &[usize], dim: usize, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..dim {
            let k = i % half.max(1);
            let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
            let arg = t as f64 * freq;
            data.push(if i < half { arg.sin() } else { arg.cos() });
        }
    }
    Ok(Tensor::from_vec(data, (ts.len(), dim), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// Logistic function. The backward pass uses `y * (1 - y)`, which stays
/// finite for saturated logits.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Global average pooling over the spatial dims: [n, c, h, w] -> [n, c].
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Scalar value of a rank-0 (or single-element) tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

/// Errors with `what` if any element of `t` is NaN or infinite.
pub fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = scalar(&t.sum_all()?)?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: a.dims().to_vec(),
            got: b.dims().to_vec(),
        });
    }
    Ok(())
}

/// Adam (decoupled weight decay disabled) over the given variables.
pub fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    let params = ParamsAdamW {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    Ok(AdamW::new(vars, params)?)
}

/// One optimizer step on `loss`.
pub fn step(opt: &mut AdamW, loss: &Tensor) -> Result<()> {
    opt.backward_step(loss)?;
    Ok(())
}

/// Mean of `|a - b|` over all elements.
pub fn l1_mean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b)?;
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Euclidean norm over all elements.
pub fn l2_norm(a: &Tensor) -> Result<Tensor> {
    Ok(a.sqr()?.sum_all()?.sqrt()?)
}
