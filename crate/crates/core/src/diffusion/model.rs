use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nets::{init_store, ConvDenoiser, NetConfig, SemanticEncoder};
use super::schedule::{NoiseSchedule, ScheduleConfig};
use super::step::{ddim_decode, ddim_encode, Denoiser, LatentState, SemanticCode};
use crate::error::{Error, Result};
use crate::nn::{adam, ensure_finite, randn, scalar, step, ParamStore, TensorRecord};

pub const DIFFAE_FORMAT: &str = "stylseg/diffae/v1";

/// Semantic encoder + conditioned noise predictor + schedule.
///
/// All diffusion-side tensors live in model space ([-1, 1] intensities);
/// [`to_model_space`] / [`to_image_space`] convert from/to [0, 1] images.
#[derive(Clone)]
pub struct DiffAEModel {
    config: NetConfig,
    schedule_config: ScheduleConfig,
    schedule: NoiseSchedule,
    params: ParamStore,
    encoder: SemanticEncoder,
    denoiser: ConvDenoiser,
    dtype: DType,
}

pub fn to_model_space(image: &Tensor) -> Result<Tensor> {
    Ok(image.affine(2.0, -1.0)?)
}

pub fn to_image_space(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.5)?)
}

impl DiffAEModel {
    pub fn new(
        config: NetConfig,
        schedule_config: ScheduleConfig,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        let params = init_store(&config, seed, dtype)?;
        Self::from_params(config, schedule_config, params, dtype, true)
    }

    fn from_params(
        config: NetConfig,
        schedule_config: ScheduleConfig,
        params: ParamStore,
        dtype: DType,
        trainable: bool,
    ) -> Result<Self> {
        let schedule = schedule_config.build()?;
        let encoder = SemanticEncoder::load(&config, &params, "enc.", trainable)?;
        let denoiser = ConvDenoiser::load(&config, &params, "den.", trainable)?;
        Ok(Self {
            config,
            schedule_config,
            schedule,
            params,
            encoder,
            denoiser,
            dtype,
        })
    }

    /// Same parameters, with every layer detached from the autograd graph.
    /// Gradients still flow through inputs and conditioning codes.
    pub fn frozen(&self) -> Result<Self> {
        Self::from_params(
            self.config.clone(),
            self.schedule_config.clone(),
            self.params.clone(),
            self.dtype,
            false,
        )
    }

    /// Independent copy of the denoiser (fresh variables), optionally trainable.
    pub fn copy_denoiser(&self, trainable: bool) -> Result<(ConvDenoiser, ParamStore)> {
        let mut store = ParamStore::new();
        for name in self.params.names().filter(|n| n.starts_with("den.")) {
            store.insert(name.to_string(), self.params.get(name)?.clone());
        }
        let store = store.deep_copy()?;
        let den = ConvDenoiser::load(&self.config, &store, "den.", trainable)?;
        Ok((den, store))
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn schedule_config(&self) -> &ScheduleConfig {
        &self.schedule_config
    }

    pub fn denoiser(&self) -> &ConvDenoiser {
        &self.denoiser
    }

    pub fn encoder(&self) -> &SemanticEncoder {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn code_dim(&self) -> usize {
        self.config.code_dim
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [
            self.config.channels,
            self.config.image_size,
            self.config.image_size,
        ]
    }

    /// Errors unless `x` is [n, c, s, s] with the configured c and s.
    pub fn check_image(&self, x: &Tensor) -> Result<()> {
        let [c, h, w] = self.image_shape();
        match x.dims() {
            [_, xc, xh, xw] if *xc == c && *xh == h && *xw == w => Ok(()),
            other => Err(Error::ShapeMismatch {
                expected: vec![x.dims().first().copied().unwrap_or(1), c, h, w],
                got: other.to_vec(),
            }),
        }
    }

    /// `z_sem = Enc(x)` for a model-space batch.
    pub fn encode_semantic(&self, x: &Tensor) -> Result<SemanticCode> {
        self.check_image(x)?;
        let z = self.encoder.forward(x)?;
        ensure_finite(&z, "semantic encoder")?;
        Ok(SemanticCode(z))
    }

    /// Deterministic inversion of a clean model-space batch to timestep
    /// `steps * stride` under conditioning `code`.
    pub fn encode_stochastic(
        &self,
        x: &Tensor,
        code: &SemanticCode,
        steps: usize,
        stride: usize,
    ) -> Result<LatentState> {
        self.check_image(x)?;
        let traj = ddim_encode(
            &LatentState::new(x.clone(), 0),
            steps,
            stride,
            &self.denoiser,
            &self.schedule,
            Some(code),
        )?;
        Ok(traj
            .last()
            .cloned()
            .unwrap_or_else(|| LatentState::new(x.clone(), 0)))
    }

    /// Full reverse trajectory `T -> 0` from `noise` conditioned on `code`.
    pub fn generate_conditioned(&self, code: &SemanticCode, noise: &Tensor) -> Result<Tensor> {
        self.generate_strided(code, noise, 1)
    }

    /// Reverse trajectory from `T` visiting every `stride`-th timestep.
    /// `T` must be a multiple of `stride`.
    pub fn generate_strided(
        &self,
        code: &SemanticCode,
        noise: &Tensor,
        stride: usize,
    ) -> Result<Tensor> {
        self.check_image(noise)?;
        generate_with(&self.denoiser, &self.schedule, code, noise, stride)
    }

    /// Denoising objective `|| eps(x_t, t, Enc(x0)) - n ||^2` (mean) for a
    /// model-space batch with per-sample timesteps and noise.
    pub fn denoising_loss(&self, x0: &Tensor, ts: &[usize], noise: &Tensor) -> Result<Tensor> {
        self.check_image(x0)?;
        let n = x0.dim(0)?;
        let sa: Vec<f64> = ts
            .iter()
            .map(|&t| self.schedule.alpha_bar(t).sqrt())
            .collect();
        let sb: Vec<f64> = ts
            .iter()
            .map(|&t| (1.0 - self.schedule.alpha_bar(t)).sqrt())
            .collect();
        let sa = Tensor::from_vec(sa, (n, 1, 1, 1), &Device::Cpu)?.to_dtype(x0.dtype())?;
        let sb = Tensor::from_vec(sb, (n, 1, 1, 1), &Device::Cpu)?.to_dtype(x0.dtype())?;
        let xt = (x0.broadcast_mul(&sa)? + noise.broadcast_mul(&sb)?)?;
        let z = self.encoder.forward(x0)?;
        let pred = self.denoiser.forward(&xt, ts, Some(&z))?;
        Ok((pred - noise)?.sqr()?.mean_all()?)
    }

    pub fn to_checkpoint(&self) -> Result<DiffAECheckpoint> {
        Ok(DiffAECheckpoint {
            format: DIFFAE_FORMAT.to_string(),
            net: self.config.clone(),
            schedule: self.schedule_config.clone(),
            alpha_bar: self.schedule.values().to_vec(),
            dtype: dtype_name(self.dtype).to_string(),
            params: self.params.to_records()?,
        })
    }

    pub fn from_checkpoint(ckpt: &DiffAECheckpoint) -> Result<Self> {
        if ckpt.format != DIFFAE_FORMAT {
            return Err(Error::Checkpoint(format!(
                "expected format `{DIFFAE_FORMAT}`, found `{}`",
                ckpt.format
            )));
        }
        let dtype = parse_dtype(&ckpt.dtype)?;
        let params = ParamStore::from_records(&ckpt.params, dtype)?;
        params.check_layout(&init_store(&ckpt.net, 0, dtype)?)?;
        let model =
            Self::from_params(ckpt.net.clone(), ckpt.schedule.clone(), params, dtype, true)?;
        if model.schedule.values() != ckpt.alpha_bar.as_slice() {
            return Err(Error::Checkpoint(
                "stored schedule does not match its configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = serde_json::to_vec(&self.to_checkpoint()?)?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(&bytes))
    }

    /// Loads a checkpoint and returns it with the content hash of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: DiffAECheckpoint = serde_json::from_slice(&bytes)?;
        Ok((Self::from_checkpoint(&ckpt)?, content_hash(&bytes)))
    }

    /// Hash of the serialized checkpoint; identifies the model inside
    /// downstream checkpoints.
    pub fn content_hash(&self) -> Result<String> {
        Ok(content_hash(&serde_json::to_vec(&self.to_checkpoint()?)?))
    }
}

/// Reverse trajectory `T -> 0` (every `stride`-th timestep) for any denoiser.
pub fn generate_with<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    code: &SemanticCode,
    noise: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let stride = stride.max(1);
    let total = schedule.steps();
    if total % stride != 0 {
        return Err(Error::InvalidConfig(format!(
            "stride {stride} does not divide T = {total}"
        )));
    }
    let start = LatentState::new(noise.clone(), total);
    Ok(ddim_decode(
        &start,
        total / stride,
        stride,
        denoiser,
        schedule,
        Some(code),
    )?
    .x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffAECheckpoint {
    pub format: String,
    pub net: NetConfig,
    pub schedule: ScheduleConfig,
    pub alpha_bar: Vec<f64>,
    pub dtype: String,
    pub params: BTreeMap<String, TensorRecord>,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F64 => "f64",
        _ => "f32",
    }
}

pub(crate) fn parse_dtype(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unsupported dtype `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffAETrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DiffAETrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 12,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Result of [`train_diffae`]: the model and one loss value per optimizer step.
pub struct TrainedDiffAE {
    pub model: DiffAEModel,
    pub history: Vec<f64>,
    pub steps_per_epoch: usize,
}

impl TrainedDiffAE {
    /// Mean loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        self.history
            .chunks(self.steps_per_epoch.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Trains encoder and denoiser jointly on `images` ([n, c, s, s], values in
/// [0, 1]) with the conditioned noise-prediction objective.
pub fn train_diffae(
    images: &Tensor,
    net: &NetConfig,
    schedule: &ScheduleConfig,
    config: &DiffAETrainConfig,
    dtype: DType,
) -> Result<TrainedDiffAE> {
    let n = images.dim(0)?;
    if n == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidConfig(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let model = DiffAEModel::new(net.clone(), schedule.clone(), config.seed, dtype)?;
    let data = to_model_space(&images.to_dtype(dtype)?)?;
    model.check_image(&data)?;
    let mut opt = adam(model.params.vars(), config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d1ff);
    let big_t = model.schedule.steps();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let idx = Tensor::from_vec(
                batch.iter().map(|&i| i as u32).collect::<Vec<_>>(),
                batch.len(),
                &Device::Cpu,
            )?;
            let x0 = data.index_select(&idx, 0)?;
            let ts: Vec<usize> = batch.iter().map(|_| rng.gen_range(1..=big_t)).collect();
            let noise = randn(&mut rng, x0.dims(), dtype)?;
            let loss = model.denoising_loss(&x0, &ts, &noise)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: history.len(),
                    detail: format!("denoising loss = {value}"),
                });
            }
            step(&mut opt, &loss)?;
            history.push(value);
        }
    }
    log::info!(
        "diffae trained: {} steps, final loss {:.4}",
        history.len(),
        history.last().copied().unwrap_or(0.0)
    );
    Ok(TrainedDiffAE {
        model,
        history,
        steps_per_epoch,
    })
}
