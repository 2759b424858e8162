use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::StyleConfig;
use crate::error::{Error, Result};
use crate::nn::{l1_mean, scalar};

const DEGENERATE_NORM: f64 = 1e-12;

/// Directional loss `1 - cos(src_styled - src_in, tgt_styled - tgt_in)`.
///
/// Embeddings may be `[e]` or `[1, e]`. A zero direction yields the
/// constant 1 and a warning.
pub fn adv_loss(
    src_in: &Tensor,
    src_styled: &Tensor,
    tgt_in: &Tensor,
    tgt_styled: &Tensor,
) -> Result<Tensor> {
    let flat = |t: &Tensor| t.flatten_all();
    let (a0, a1, b0, b1) = (
        flat(src_in)?,
        flat(src_styled)?,
        flat(tgt_in)?,
        flat(tgt_styled)?,
    );
    let dim = a0.dim(0)?;
    for t in [&a1, &b0, &b1] {
        if t.dim(0)? != dim {
            return Err(Error::ShapeMismatch {
                expected: vec![dim],
                got: t.dims().to_vec(),
            });
        }
    }
    let a = (a1 - a0)?;
    let b = (b1 - b0)?;
    let na = a.sqr()?.sum_all()?.sqrt()?;
    let nb = b.sqr()?.sum_all()?.sqrt()?;
    if scalar(&na)? < DEGENERATE_NORM || scalar(&nb)? < DEGENERATE_NORM {
        log::warn!("directional loss: zero direction vector, returning 1");
        return Ok(Tensor::new(1.0f64, a.device())?.to_dtype(a.dtype())?);
    }
    let cos = ((a * b)?.sum_all()? / (na * nb)?)?;
    Ok(cos.affine(-1.0, 1.0)?)
}

/// `mean|G(F(G x)) - G x| + mean|F(G(F y)) - F y|` for arbitrary mappings.
pub fn cycle_loss_with<G, F>(g: G, f: F, x: &Tensor, y: &Tensor) -> Result<Tensor>
where
    G: Fn(&Tensor) -> Result<Tensor>,
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let gx = g(x)?;
    cycle_loss_from(g, f, &gx, y)
}

/// Cycle loss when `G x` has already been computed.
pub fn cycle_loss_from<G, F>(g: G, f: F, gx: &Tensor, y: &Tensor) -> Result<Tensor>
where
    G: Fn(&Tensor) -> Result<Tensor>,
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let gfgx = g(&f(gx)?)?;
    let fy = f(y)?;
    let fgfy = f(&g(&fy)?)?;
    Ok((l1_mean(&gfgx, gx)? + l1_mean(&fgfy, &fy)?)?)
}

/// Unweighted loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleLossRecord {
    pub adv: f64,
    pub cycle: f64,
    pub spn: f64,
    pub total: f64,
}

/// Graph-carrying loss components.
pub struct StyleComponents {
    pub adv: Tensor,
    pub cycle: Tensor,
    pub spn: Tensor,
}

/// `lambda1 * adv + lambda2 * cycle + lambda3 * spn`.
pub fn weighted_total(adv: f64, cycle: f64, spn: f64, config: &StyleConfig) -> f64 {
    config.lambda1 * adv + config.lambda2 * cycle + config.lambda3 * spn
}

/// Weighted total as a tensor plus the record of unweighted values.
pub fn total_style_loss(
    components: &StyleComponents,
    config: &StyleConfig,
) -> Result<(Tensor, StyleLossRecord)> {
    let adv = scalar(&components.adv)?;
    let cycle = scalar(&components.cycle)?;
    let spn = scalar(&components.spn)?;
    for (name, v) in [("adv", adv), ("cycle", cycle), ("spn", spn)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss = {v}")));
        }
        if v < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative {name} loss component {v}"
            )));
        }
    }
    let as_f64 = |t: &Tensor| t.to_dtype(DType::F64);
    let total = ((as_f64(&components.adv)?.affine(config.lambda1, 0.0)?
        + as_f64(&components.cycle)?.affine(config.lambda2, 0.0)?)?
        + as_f64(&components.spn)?.affine(config.lambda3, 0.0)?)?;
    let record = StyleLossRecord {
        adv,
        cycle,
        spn,
        total: scalar(&total)?,
    };
    Ok((total, record))
}
