use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::loss::{cycle_loss_with, StyleLossRecord};
use super::StyleConfig;
use crate::diffusion::{
    content_hash, ddim_encode, ddim_jump, dtype_name, parse_dtype, to_image_space, to_model_space,
    ConvDenoiser, Denoiser, DiffAEModel, LatentState, NoiseSchedule, SemanticCode,
};
use crate::error::{Error, Result};
use crate::nn::{ensure_finite, ParamStore, TensorRecord};
use crate::spn::{inject, spn_apply, SpnParams, SpnRecord};

pub const STYLE_FORMAT: &str = "stylseg/style-mapper/v1";

/// Timesteps of the forward (inversion) and reverse halves of a stylization
/// pass: `t1` moves of `stride` up from 0, then `t2` evenly spaced moves
/// back down to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StylePath {
    pub t1: usize,
    pub t2: usize,
    pub stride: usize,
}

impl StylePath {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        let top = self.top();
        if self.t1 == 0 || self.t2 == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "t1, t2 and stride must be positive".into(),
            ));
        }
        if top > schedule.steps() {
            return Err(Error::InvalidConfig(format!(
                "t1 * stride = {top} exceeds T = {}",
                schedule.steps()
            )));
        }
        if self.t2 > top {
            return Err(Error::InvalidConfig(format!(
                "t2 = {} exceeds the {top} timesteps reached by the forward pass",
                self.t2
            )));
        }
        Ok(())
    }

    /// Timestep reached by the forward half.
    pub fn top(&self) -> usize {
        self.t1 * self.stride
    }

    pub fn forward_path(&self) -> Vec<usize> {
        (1..=self.t1).map(|k| k * self.stride).collect()
    }

    pub fn reverse_path(&self) -> Vec<usize> {
        let top = self.top();
        (1..=self.t2)
            .map(|k| (top * (self.t2 - k) + self.t2 / 2) / self.t2)
            .collect()
    }
}

/// Deterministic inversion of a model-space batch from `t = 0` along the
/// forward path; returns every visited state.
pub fn invert_with(
    x: &Tensor,
    denoiser: &dyn Denoiser,
    code: &SemanticCode,
    path: &StylePath,
    schedule: &NoiseSchedule,
) -> Result<Vec<LatentState>> {
    ddim_encode(
        &LatentState::new(x.clone(), 0),
        path.t1,
        path.stride,
        denoiser,
        schedule,
        Some(code),
    )
}

/// Reverse half from `start` to `t = 0`, adding `spn_apply(reference)` before
/// each step whose current timestep lies in the injection window.
pub fn decode_with(
    start: &LatentState,
    reference: &Tensor,
    denoiser: &dyn Denoiser,
    code: &SemanticCode,
    spn: Option<&SpnParams>,
    path: &StylePath,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let correction = spn.map(|p| spn_apply(reference, p)).transpose()?;
    let mut state = start.clone();
    for to in path.reverse_path() {
        if let (Some(p), Some(c)) = (spn, correction.as_ref()) {
            state = inject(&state, c, state.t, p)?;
        }
        state = ddim_jump(&state, to, denoiser, schedule, Some(code))?;
    }
    Ok(state.x)
}

/// G: invert under `(src, z_src)` then decode under `(tgt, z_tgt)` with SPN
/// injection. All tensors in model space.
#[allow(clippy::too_many_arguments)]
pub fn stylize_with(
    x: &Tensor,
    src: &dyn Denoiser,
    z_src: &SemanticCode,
    tgt: &dyn Denoiser,
    z_tgt: &SemanticCode,
    spn: Option<&SpnParams>,
    path: &StylePath,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let fwd = invert_with(x, src, z_src, path, schedule)?;
    let top = fwd
        .last()
        .ok_or_else(|| Error::InvalidConfig("empty forward path".into()))?;
    decode_with(top, x, tgt, z_tgt, spn, path, schedule)
}

/// F: invert under `(tgt, z_tgt)` then decode under `(src, z_src)`, no SPN.
pub fn inverse_with(
    y: &Tensor,
    tgt: &dyn Denoiser,
    z_tgt: &SemanticCode,
    src: &dyn Denoiser,
    z_src: &SemanticCode,
    path: &StylePath,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let fwd = invert_with(y, tgt, z_tgt, path, schedule)?;
    let top = fwd
        .last()
        .ok_or_else(|| Error::InvalidConfig("empty forward path".into()))?;
    decode_with(top, y, src, z_src, None, path, schedule)
}

/// Trained source-to-target mapping: frozen source DiffAE, target branch
/// denoiser, trainable target code `z_B` and SPN.
#[derive(Clone)]
pub struct StyleMapper {
    pub(crate) source: DiffAEModel,
    pub(crate) source_hash: String,
    pub(crate) target: ConvDenoiser,
    pub(crate) target_params: Option<ParamStore>,
    pub(crate) target_code: Var,
    pub(crate) source_code: Tensor,
    pub(crate) spn: SpnParams,
    pub(crate) config: StyleConfig,
    pub(crate) history: Vec<StyleLossRecord>,
}

impl StyleMapper {
    pub fn source(&self) -> &DiffAEModel {
        &self.source
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn config(&self) -> &StyleConfig {
        &self.config
    }

    pub fn spn(&self) -> &SpnParams {
        &self.spn
    }

    pub fn target_code(&self) -> SemanticCode {
        SemanticCode(self.target_code.as_tensor().clone())
    }

    pub fn source_code(&self) -> SemanticCode {
        SemanticCode(self.source_code.clone())
    }

    pub fn history(&self) -> &[StyleLossRecord] {
        &self.history
    }

    pub fn path(&self) -> StylePath {
        self.config.path()
    }

    /// G on a model-space batch, graph-carrying.
    pub fn forward_g(&self, x: &Tensor, spn: Option<&SpnParams>) -> Result<Tensor> {
        let z_in = self.source.encode_semantic(x)?;
        stylize_with(
            x,
            self.source.denoiser(),
            &z_in,
            &self.target,
            &self.target_code(),
            spn,
            &self.path(),
            self.source.schedule(),
        )
    }

    /// F on a model-space batch, graph-carrying.
    pub fn forward_f(&self, y: &Tensor) -> Result<Tensor> {
        inverse_with(
            y,
            &self.target,
            &self.target_code(),
            self.source.denoiser(),
            &self.source_code(),
            &self.path(),
            self.source.schedule(),
        )
    }

    /// Applies G to a batch of [0, 1] images; output clamped to [0, 1].
    pub fn stylize(&self, images: &Tensor) -> Result<Tensor> {
        let x = to_model_space(&images.to_dtype(self.source.dtype())?)?;
        self.source.check_image(&x)?;
        let out = self.forward_g(&x, Some(&self.spn))?.detach();
        ensure_finite(&out, "stylization trajectory")?;
        Ok(to_image_space(&out)?
            .clamp(0.0, 1.0)?
            .to_dtype(images.dtype())?)
    }

    /// Cycle loss of this mapper on a source and a target image in [0, 1].
    pub fn cycle_loss(&self, x_source: &Tensor, y_target: &Tensor) -> Result<Tensor> {
        let dtype = self.source.dtype();
        let x = to_model_space(&x_source.to_dtype(dtype)?)?;
        let y = to_model_space(&y_target.to_dtype(dtype)?)?;
        self.source.check_image(&x)?;
        self.source.check_image(&y)?;
        let g = |t: &Tensor| to_image_space(&self.forward_g(&to_model_space(t)?, Some(&self.spn))?);
        let f = |t: &Tensor| to_image_space(&self.forward_f(&to_model_space(t)?)?);
        let l = cycle_loss_with(g, f, &to_image_space(&x)?, &to_image_space(&y)?)?;
        ensure_finite(&l, "cycle loss")?;
        Ok(l)
    }

    pub fn to_checkpoint(&self) -> Result<StyleCheckpoint> {
        Ok(StyleCheckpoint {
            format: STYLE_FORMAT.into(),
            source_hash: self.source_hash.clone(),
            dtype: dtype_name(self.source.dtype()).into(),
            config: self.config.clone(),
            target_code: TensorRecord::from_tensor(self.target_code.as_tensor())?,
            source_code: TensorRecord::from_tensor(&self.source_code)?,
            spn: self.spn.to_record()?,
            target_params: self
                .target_params
                .as_ref()
                .map(|p| p.to_records())
                .transpose()?,
            history: self.history.clone(),
        })
    }

    /// Rebuilds a mapper on top of `source`, whose content hash must match
    /// the one recorded at training time.
    pub fn from_checkpoint(ckpt: &StyleCheckpoint, source: &DiffAEModel) -> Result<Self> {
        if ckpt.format != STYLE_FORMAT {
            return Err(Error::Checkpoint(format!(
                "expected format `{STYLE_FORMAT}`, found `{}`",
                ckpt.format
            )));
        }
        let hash = source.content_hash()?;
        if hash != ckpt.source_hash {
            return Err(Error::Checkpoint(format!(
                "style mapper was trained on source model {}, got {hash}",
                ckpt.source_hash
            )));
        }
        let dtype = parse_dtype(&ckpt.dtype)?;
        if dtype != source.dtype() {
            return Err(Error::Checkpoint(
                "dtype differs from the source model".into(),
            ));
        }
        let source = source.frozen()?;
        let (target, target_params) = match &ckpt.target_params {
            None => (source.copy_denoiser(false)?.0, None),
            Some(records) => {
                let store = ParamStore::from_records(records, dtype)?;
                let layout = source.copy_denoiser(false)?.1;
                store.check_layout(&layout)?;
                (
                    ConvDenoiser::load(source.config(), &store, "den.", false)?,
                    Some(store),
                )
            }
        };
        let target_code = Var::from_tensor(&ckpt.target_code.to_tensor(dtype)?)?;
        let source_code = ckpt.source_code.to_tensor(dtype)?;
        for (name, t) in [
            ("target", target_code.as_tensor()),
            ("source", &source_code),
        ] {
            if t.dims() != [1, source.code_dim()] {
                return Err(Error::Checkpoint(format!(
                    "{name} code has shape {:?}",
                    t.dims()
                )));
            }
        }
        let spn = SpnParams::from_record(&ckpt.spn, dtype)?;
        spn.check_window(source.schedule().steps())?;
        Ok(Self {
            source,
            source_hash: hash,
            target,
            target_params,
            target_code,
            source_code,
            spn,
            config: ckpt.config.clone(),
            history: ckpt.history.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = serde_json::to_vec(&self.to_checkpoint()?)?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(&bytes))
    }

    pub fn load(path: &Path, source: &DiffAEModel) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: StyleCheckpoint = serde_json::from_slice(&bytes)?;
        Self::from_checkpoint(&ckpt, source)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleCheckpoint {
    pub format: String,
    pub source_hash: String,
    pub dtype: String,
    pub config: StyleConfig,
    pub target_code: TensorRecord,
    pub source_code: TensorRecord,
    pub spn: SpnRecord,
    pub target_params: Option<BTreeMap<String, TensorRecord>>,
    pub history: Vec<StyleLossRecord>,
}
