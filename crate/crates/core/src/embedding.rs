//! Image embeddings used by the directional style loss.
//!
//! [`EmbeddingBackend`] is the plug-in point; [`ConvEmbedder`] is a small
//! convolutional encoder trained by instance discrimination (NT-Xent over
//! two geometric views of each image) and frozen afterwards.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{content_hash, dtype_name, parse_dtype};
use crate::error::{Error, Result};
use crate::nn::{
    adam, global_avg_pool, randn, scalar, silu, step, Conv2d, Init, Linear, ParamStore,
    TensorRecord,
};

pub const EMBEDDER_FORMAT: &str = "stylseg/embedder/v1";

/// Maps a batch of images `[n, 3, h, w]` with values in [0, 1] to unit-norm
/// rows `[n, e]`. Must be deterministic and differentiable in the input.
pub trait EmbeddingBackend {
    fn embed(&self, images: &Tensor) -> Result<Tensor>;
    fn dim(&self) -> usize;
}

impl<E: EmbeddingBackend + ?Sized> EmbeddingBackend for &E {
    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        (**self).embed(images)
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }
}

/// Divides each row by its Euclidean norm.
pub fn normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub channels: usize,
    pub width: usize,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            width: 8,
            dim: 32,
        }
    }
}

/// Three stride-2 convolutions, global pooling, linear head, L2 normalization.
#[derive(Clone)]
pub struct ConvEmbedder {
    config: EmbedderConfig,
    params: ParamStore,
    convs: Vec<Conv2d>,
    head: Linear,
}

impl ConvEmbedder {
    pub fn new(config: EmbedderConfig, seed: u64, dtype: DType) -> Result<Self> {
        if config.channels == 0 || config.width == 0 || config.dim == 0 {
            return Err(Error::InvalidConfig(
                "embedder sizes must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            rng: &mut rng,
            dtype,
        };
        let mut store = ParamStore::new();
        let w = config.width;
        let chans = [config.channels, w, 2 * w, 4 * w];
        for i in 0..3 {
            Conv2d::init(
                &mut store,
                &mut init,
                &format!("conv{i}"),
                chans[i],
                chans[i + 1],
                3,
                1.0,
            )?;
        }
        Linear::init(&mut store, &mut init, "head", 4 * w, config.dim, 1.0)?;
        Self::from_params(config, store, true)
    }

    fn from_params(config: EmbedderConfig, params: ParamStore, trainable: bool) -> Result<Self> {
        let convs = (0..3)
            .map(|i| Conv2d::load(&params, &format!("conv{i}"), 2, 1, trainable))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::load(&params, "head", trainable)?;
        Ok(Self {
            config,
            params,
            convs,
            head,
        })
    }

    /// Copy whose weights are detached from the autograd graph.
    pub fn frozen(&self) -> Result<Self> {
        Self::from_params(self.config.clone(), self.params.deep_copy()?, false)
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn to_checkpoint(&self) -> Result<EmbedderCheckpoint> {
        let dtype = self
            .params
            .vars()
            .first()
            .map(|v| v.dtype())
            .unwrap_or(DType::F32);
        Ok(EmbedderCheckpoint {
            format: EMBEDDER_FORMAT.into(),
            config: self.config.clone(),
            dtype: dtype_name(dtype).into(),
            params: self.params.to_records()?,
        })
    }

    pub fn from_checkpoint(ckpt: &EmbedderCheckpoint) -> Result<Self> {
        if ckpt.format != EMBEDDER_FORMAT {
            return Err(Error::Checkpoint(format!(
                "expected format `{EMBEDDER_FORMAT}`, found `{}`",
                ckpt.format
            )));
        }
        let dtype = parse_dtype(&ckpt.dtype)?;
        let params = ParamStore::from_records(&ckpt.params, dtype)?;
        params.check_layout(Self::new(ckpt.config.clone(), 0, dtype)?.params())?;
        Self::from_params(ckpt.config.clone(), params, false)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = serde_json::to_vec(&self.to_checkpoint()?)?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: EmbedderCheckpoint = serde_json::from_slice(&bytes)?;
        Ok((Self::from_checkpoint(&ckpt)?, content_hash(&bytes)))
    }
}

impl EmbeddingBackend for ConvEmbedder {
    fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = images.dims4()?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.channels],
                got: vec![c],
            });
        }
        let mut h = images.affine(2.0, -1.0)?;
        for conv in &self.convs {
            h = silu(&conv.forward(&h)?)?;
        }
        normalize_rows(&self.head.forward(&global_avg_pool(&h)?)?)
    }

    fn dim(&self) -> usize {
        self.config.dim
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderCheckpoint {
    pub format: String,
    pub config: EmbedderConfig,
    pub dtype: String,
    pub params: BTreeMap<String, TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            temperature: 0.2,
            noise: 0.02,
            seed: 0,
        }
    }
}

/// Random flip / transpose of one image `[c, h, w]` plus small Gaussian noise.
fn augment(img: &Tensor, rng: &mut ChaCha8Rng, noise: f64) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    let mut out = img.clone();
    if rng.gen_bool(0.5) {
        let idx = Tensor::from_vec((0..w as u32).rev().collect::<Vec<_>>(), w, &Device::Cpu)?;
        out = out.index_select(&idx, 2)?;
    }
    if rng.gen_bool(0.5) {
        let idx = Tensor::from_vec((0..h as u32).rev().collect::<Vec<_>>(), h, &Device::Cpu)?;
        out = out.index_select(&idx, 1)?;
    }
    if h == w && rng.gen_bool(0.5) {
        out = out.transpose(1, 2)?.contiguous()?;
    }
    if noise > 0.0 {
        let n = randn(rng, out.dims(), out.dtype())?;
        out = (out + (n * noise)?)?;
    }
    Ok(out)
}

/// NT-Xent loss for two views `a`, `b` of the same `n` instances, both `[n, e]`
/// and unit-norm.
pub fn nt_xent(a: &Tensor, b: &Tensor, temperature: f64) -> Result<Tensor> {
    let n = a.dim(0)?;
    let z = Tensor::cat(&[a, b], 0)?;
    let sim = (z.matmul(&z.t()?)? / temperature)?;
    let m = 2 * n;
    let mut mask = vec![0f64; m * m];
    let mut target = vec![0f64; m * m];
    for i in 0..m {
        mask[i * m + i] = -1e9;
        target[i * m + (i + n) % m] = 1.0;
    }
    let dtype = a.dtype();
    let mask = Tensor::from_vec(mask, (m, m), &Device::Cpu)?.to_dtype(dtype)?;
    let target = Tensor::from_vec(target, (m, m), &Device::Cpu)?.to_dtype(dtype)?;
    let logp = candle_nn::ops::log_softmax(&(sim + mask)?, D::Minus1)?;
    Ok(((logp * target)?.sum_all()? / -(m as f64))?)
}

/// Trains a [`ConvEmbedder`] on `images` ([n, c, h, w] in [0, 1]); returns
/// the frozen embedder and one loss per step.
pub fn train_embedder(
    images: &Tensor,
    config: &EmbedderConfig,
    train: &EmbedderTrainConfig,
    dtype: DType,
) -> Result<(ConvEmbedder, Vec<f64>)> {
    let n = images.dim(0)?;
    if n < 2 {
        return Err(Error::InvalidInput(
            "instance discrimination needs at least two images".into(),
        ));
    }
    if train.batch_size < 2 || train.epochs == 0 || train.temperature <= 0.0 {
        return Err(Error::InvalidConfig(
            "embedder training needs batch_size >= 2, epochs >= 1, temperature > 0".into(),
        ));
    }
    let model = ConvEmbedder::new(config.clone(), train.seed, dtype)?;
    let data = images.to_dtype(dtype)?;
    let mut opt = adam(model.params.vars(), train.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0xe3be_dde4);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let mut va = Vec::with_capacity(batch.len());
            let mut vb = Vec::with_capacity(batch.len());
            for &i in batch {
                let img = data.get(i)?;
                va.push(augment(&img, &mut rng, train.noise)?);
                vb.push(augment(&img, &mut rng, train.noise)?);
            }
            let a = model.embed(&Tensor::stack(&va, 0)?)?;
            let b = model.embed(&Tensor::stack(&vb, 0)?)?;
            let loss = nt_xent(&a, &b, train.temperature)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: history.len(),
                    detail: format!("nt-xent = {value}"),
                });
            }
            step(&mut opt, &loss)?;
            history.push(value);
        }
    }
    log::info!("embedder trained: {} steps", history.len());
    Ok((model.frozen()?, history))
}
