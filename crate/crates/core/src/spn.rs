//! Structure-preserving network: a 1x1 convolution of the clean input image
//! whose output is added to the latent before each reverse step inside an
//! injection window.

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::diffusion::LatentState;
use crate::error::{Error, Result};
use crate::nn::{check_same_shape, l2_norm, TensorRecord};

/// 1x1 kernel `[c_out, c_in]`, bias `[c_out]`, and the inclusive range of
/// reverse timesteps `[lo, hi]` where the correction is injected.
#[derive(Debug, Clone)]
pub struct SpnParams {
    pub weight: Var,
    pub bias: Var,
    pub window: (usize, usize),
}

/// Additive latent correction, shaped like the state it corrects.
#[derive(Debug, Clone)]
pub struct Correction(pub Tensor);

impl SpnParams {
    /// Zero kernel and bias: injecting the result leaves trajectories unchanged.
    pub fn zeros(
        channels_out: usize,
        channels_in: usize,
        window: (usize, usize),
        dtype: DType,
    ) -> Result<Self> {
        Self::from_tensors(
            Tensor::zeros((channels_out, channels_in), dtype, &Device::Cpu)?,
            Tensor::zeros(channels_out, dtype, &Device::Cpu)?,
            window,
        )
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor, window: (usize, usize)) -> Result<Self> {
        let (c_out, _) = weight.dims2()?;
        if bias.dims() != [c_out] {
            return Err(Error::ShapeMismatch {
                expected: vec![c_out],
                got: bias.dims().to_vec(),
            });
        }
        let (lo, hi) = window;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "injection window [{lo}, {hi}] must satisfy 1 <= lo <= hi"
            )));
        }
        Ok(Self {
            weight: Var::from_tensor(&weight)?,
            bias: Var::from_tensor(&bias)?,
            window,
        })
    }

    pub fn channels_out(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn channels_in(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn in_window(&self, t: usize) -> bool {
        (self.window.0..=self.window.1).contains(&t)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    /// Errors unless the window lies in `[1, T]`.
    pub fn check_window(&self, steps: usize) -> Result<()> {
        if self.window.1 > steps {
            return Err(Error::InvalidConfig(format!(
                "injection window [{}, {}] exceeds T = {steps}",
                self.window.0, self.window.1
            )));
        }
        Ok(())
    }

    pub fn deep_copy(&self) -> Result<Self> {
        Self::from_tensors(
            self.weight.as_tensor().copy()?,
            self.bias.as_tensor().copy()?,
            self.window,
        )
    }

    pub fn to_record(&self) -> Result<SpnRecord> {
        Ok(SpnRecord {
            weight: TensorRecord::from_tensor(self.weight.as_tensor())?,
            bias: TensorRecord::from_tensor(self.bias.as_tensor())?,
            window: self.window,
        })
    }

    pub fn from_record(rec: &SpnRecord, dtype: DType) -> Result<Self> {
        Self::from_tensors(
            rec.weight.to_tensor(dtype)?,
            rec.bias.to_tensor(dtype)?,
            rec.window,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpnRecord {
    pub weight: TensorRecord,
    pub bias: TensorRecord,
    pub window: (usize, usize),
}

/// `out[c, h, w] = sum_k weight[c, k] * image[k, h, w] + bias[c]` for every
/// image of the batch.
pub fn spn_apply(image: &Tensor, params: &SpnParams) -> Result<Correction> {
    let (_, c_in, _, _) = image.dims4()?;
    if c_in != params.channels_in() {
        return Err(Error::ShapeMismatch {
            expected: vec![params.channels_in()],
            got: vec![c_in],
        });
    }
    let w = params.weight.as_tensor();
    let kernel = w.reshape((params.channels_out(), c_in, 1, 1))?;
    let out =
        image
            .conv2d(&kernel, 0, 1, 1, 1)?
            .broadcast_add(
                &params
                    .bias
                    .as_tensor()
                    .reshape((1, params.channels_out(), 1, 1))?,
            )?;
    Ok(Correction(out))
}

/// `x' = x + correction` when `t` lies in the injection window, `x` otherwise.
/// The timestep of the state is unchanged.
pub fn inject(
    state: &LatentState,
    correction: &Correction,
    t: usize,
    params: &SpnParams,
) -> Result<LatentState> {
    check_same_shape(&state.x, &correction.0)?;
    if !params.in_window(t) {
        return Ok(state.clone());
    }
    Ok(LatentState::new((&state.x + &correction.0)?, state.t))
}

/// Mean over targets of `|| spn_apply(reference) - target ||_2`.
pub fn spn_loss(
    params: &SpnParams,
    reference_image: &Tensor,
    targets: &[Correction],
) -> Result<Tensor> {
    if targets.is_empty() {
        return Err(Error::InvalidInput(
            "spn_loss needs at least one target latent".into(),
        ));
    }
    let out = spn_apply(reference_image, params)?.0;
    let mut total: Option<Tensor> = None;
    for target in targets {
        check_same_shape(&out, &target.0)?;
        let term = l2_norm(&(&out - &target.0)?)?;
        total = Some(match total {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    Ok((total.expect("nonempty") / targets.len() as f64)?)
}
