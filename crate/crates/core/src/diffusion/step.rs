use candle_core::Tensor;

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{check_same_shape, ensure_finite};

/// Semantic conditioning vector(s), shape [n, d] or [1, d] (broadcast over
/// the batch).
#[derive(Debug, Clone)]
pub struct SemanticCode(pub Tensor);

impl SemanticCode {
    pub fn dim(&self) -> usize {
        self.0.dims().last().copied().unwrap_or(0)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Image-shaped diffusion state `x_t` ([n, c, h, w]) tagged with its timestep.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub x: Tensor,
    pub t: usize,
}

impl LatentState {
    pub fn new(x: Tensor, t: usize) -> Self {
        Self { x, t }
    }
}

/// Noise predictor `eps(x, t, z)`.
///
/// Implementations must be deterministic and return a tensor shaped like `x`.
pub trait Denoiser {
    fn eps(&self, x: &Tensor, t: usize, code: Option<&SemanticCode>) -> Result<Tensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn eps(&self, x: &Tensor, t: usize, code: Option<&SemanticCode>) -> Result<Tensor> {
        (**self).eps(x, t, code)
    }
}

/// Clean-image estimate `(x_t - sqrt(1 - a_t) eps) / sqrt(a_t)`.
///
/// `t = 0` is accepted: it is the data level of the chain, where
/// `alpha_bar` is one and the estimate is `x_t` itself.
pub fn predict_x0(
    x_t: &Tensor,
    t: usize,
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    check_same_shape(x_t, eps)?;
    let a = schedule.alpha_bar(t);
    Ok((x_t - eps.affine((1.0 - a).sqrt(), 0.0)?)?.affine(1.0 / a.sqrt(), 0.0)?)
}

/// Deterministic DDIM transition from `from` to `to` given the noise
/// prediction made at `from`: `sqrt(a_to) f + sqrt(1 - a_to) eps`.
pub fn ddim_transition(
    x: &Tensor,
    eps: &Tensor,
    from: usize,
    to: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t(to)?;
    let x0 = predict_x0(x, from, eps, schedule)?;
    let a = schedule.alpha_bar(to);
    Ok((x0.affine(a.sqrt(), 0.0)? + eps.affine((1.0 - a).sqrt(), 0.0)?)?)
}

fn checked_eps<D: Denoiser + ?Sized>(
    denoiser: &D,
    state: &LatentState,
    code: Option<&SemanticCode>,
) -> Result<Tensor> {
    let eps = denoiser.eps(&state.x, state.t, code)?;
    check_same_shape(&state.x, &eps)?;
    ensure_finite(&eps, "denoiser")?;
    Ok(eps)
}

/// Moves a state from `state.t` to `to` (either direction) with one
/// denoiser evaluation at the current timestep.
pub fn ddim_jump<D: Denoiser + ?Sized>(
    state: &LatentState,
    to: usize,
    denoiser: &D,
    schedule: &NoiseSchedule,
    code: Option<&SemanticCode>,
) -> Result<LatentState> {
    schedule.check_t(state.t)?;
    schedule.check_t(to)?;
    let eps = checked_eps(denoiser, state, code)?;
    let x = ddim_transition(&state.x, &eps, state.t, to, schedule)?;
    Ok(LatentState::new(x, to))
}

/// One deterministic inversion step `t -> t + 1`.
pub fn ddim_forward_step<D: Denoiser + ?Sized>(
    state: &LatentState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    code: Option<&SemanticCode>,
) -> Result<LatentState> {
    if state.t >= schedule.steps() {
        return Err(Error::TimestepOutOfRange {
            t: state.t,
            lo: 0,
            hi: schedule.steps() - 1,
        });
    }
    ddim_jump(state, state.t + 1, denoiser, schedule, code)
}

/// One deterministic denoising step `t -> t - 1`.
pub fn ddim_reverse_step<D: Denoiser + ?Sized>(
    state: &LatentState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    code: Option<&SemanticCode>,
) -> Result<LatentState> {
    if state.t == 0 || state.t > schedule.steps() {
        return Err(Error::TimestepOutOfRange {
            t: state.t,
            lo: 1,
            hi: schedule.steps(),
        });
    }
    ddim_jump(state, state.t - 1, denoiser, schedule, code)
}

/// Timesteps visited by `steps` strided moves starting at `start`, going up
/// (`forward`) or down. Errors if the walk leaves `[0, T]`.
pub fn stride_path(
    start: usize,
    steps: usize,
    stride: usize,
    forward: bool,
    schedule: &NoiseSchedule,
) -> Result<Vec<usize>> {
    let stride = stride.max(1);
    let mut path = Vec::with_capacity(steps);
    let mut t = start;
    for _ in 0..steps {
        t = if forward {
            t + stride
        } else {
            t.checked_sub(stride).ok_or(Error::TimestepOutOfRange {
                t: 0,
                lo: stride,
                hi: schedule.steps(),
            })?
        };
        schedule.check_t(t)?;
        path.push(t);
    }
    Ok(path)
}

/// Runs `steps` inversion moves of size `stride` from `state`, returning the
/// final state and every intermediate state (excluding the start).
pub fn ddim_encode<D: Denoiser + ?Sized>(
    state: &LatentState,
    steps: usize,
    stride: usize,
    denoiser: &D,
    schedule: &NoiseSchedule,
    code: Option<&SemanticCode>,
) -> Result<Vec<LatentState>> {
    let path = stride_path(state.t, steps, stride, true, schedule)?;
    let mut out: Vec<LatentState> = Vec::with_capacity(path.len());
    let mut cur = state.clone();
    for to in path {
        cur = ddim_jump(&cur, to, denoiser, schedule, code)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Runs `steps` denoising moves of size `stride` from `state`.
pub fn ddim_decode<D: Denoiser + ?Sized>(
    state: &LatentState,
    steps: usize,
    stride: usize,
    denoiser: &D,
    schedule: &NoiseSchedule,
    code: Option<&SemanticCode>,
) -> Result<LatentState> {
    let path = stride_path(state.t, steps, stride, false, schedule)?;
    let mut cur = state.clone();
    for to in path {
        cur = ddim_jump(&cur, to, denoiser, schedule, code)?;
    }
    Ok(cur)
}
