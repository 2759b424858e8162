//! Segmenters and the stylize-then-segment pipeline.

mod unet;

use candle_core::{DType, Tensor, D};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use unet::{SegCheckpoint, UNet, SEGMENTER_FORMAT};

use crate::data::{images_to_tensor, masks_to_tensor, tensor_to_images, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::nn::{adam, check_same_shape, scalar, step};
use crate::style::StyleMapper;

const BCE_CLAMP: f64 = 1e-7;
const DICE_SMOOTH: f64 = 1e-6;

/// A per-pixel foreground probability model.
pub trait Segmenter {
    /// `[n, c, h, w]` images in [0, 1] to `[n, 1, h, w]` probabilities.
    fn predict_batch(&self, images: &Tensor) -> Result<Tensor>;

    /// Probability map `[h, w]` of one `[c, h, w]` image.
    fn predict_prob(&self, image: &Array3<f32>) -> Result<Array2<f64>> {
        let (_, h, w) = image.dim();
        let p = self.predict_batch(&images_to_tensor(&[image])?)?;
        let v = p.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Array2::from_shape_vec((h, w), v).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight of the cross-entropy term; the soft-Dice term gets `1 - loss_mix`.
    pub loss_mix: f64,
    /// Base channel width of the U-Net.
    pub width: usize,
    /// Random horizontal and vertical flips during training.
    pub flips: bool,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 12,
            learning_rate: 1e-3,
            seed: 0,
            loss_mix: 0.5,
            width: 16,
            flips: true,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and width must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.loss_mix) {
            return Err(Error::InvalidConfig(format!(
                "loss_mix {} outside [0, 1]",
                self.loss_mix
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `loss_mix * BCE + (1 - loss_mix) * (1 - soft Dice)`, averaged over the
/// batch. Both tensors are `[n, 1, h, w]` (or any shape with a leading batch
/// dimension); `gt` holds 0/1 values.
pub fn seg_loss(pred: &Tensor, gt: &Tensor, loss_mix: f64) -> Result<Tensor> {
    check_same_shape(gt, pred)?;
    let lo = scalar(&pred.min_all()?)?;
    let hi = scalar(&pred.max_all()?)?;
    if !(lo >= 0.0 && hi <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "predictions span [{lo}, {hi}], outside [0, 1]"
        )));
    }
    let gt = gt.to_dtype(pred.dtype())?;
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let bce = ((&gt * p.log()?)? + (gt.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?)?
        .mean_all()?
        .neg()?;
    let n = pred.dim(0)?;
    let pf = pred.reshape((n, ()))?;
    let gf = gt.reshape((n, ()))?;
    let inter = (&pf * &gf)?.sum(D::Minus1)?;
    let denom = (pf.sum(D::Minus1)? + gf.sum(D::Minus1)?)?;
    let dice = ((inter * 2.0)? + DICE_SMOOTH)?
        .div(&(denom + DICE_SMOOTH)?)?
        .mean_all()?;
    Ok(((bce * loss_mix)? + (dice.affine(-1.0, 1.0)? * (1.0 - loss_mix))?)?)
}

fn flip(t: &Tensor, dim: usize) -> Result<Tensor> {
    let n = t.dim(dim)?;
    let idx = Tensor::from_vec((0..n as u32).rev().collect::<Vec<_>>(), n, t.device())?;
    Ok(t.index_select(&idx, dim)?)
}

/// Trains a [`UNet`] on images `[c, h, w]` and masks of the same size.
/// Returns the model and the mean loss of every epoch.
pub fn train_segmenter(
    images: &[&Array3<f32>],
    masks: &[&BinaryMask],
    config: &SegConfig,
    dtype: DType,
) -> Result<(UNet, Vec<f64>)> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if images.len() != masks.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} masks",
            images.len(),
            masks.len()
        )));
    }
    let (c, h, w) = images[0].dim();
    for (img, m) in images.iter().zip(masks) {
        if img.dim() != (c, h, w) || m.shape() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: vec![c, h, w],
                got: vec![img.dim().0, m.shape().0, m.shape().1],
            });
        }
    }
    let x = images_to_tensor(images)?.to_dtype(dtype)?;
    let y = masks_to_tensor(masks)?.to_dtype(dtype)?;
    let model = UNet::new(c, config.width, config.seed, dtype)?;
    model.check_input_size(h, w)?;
    let mut opt = adam(model.params().vars(), config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e9_u64);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let idx = Tensor::from_vec(
                batch.iter().map(|&i| i as u32).collect::<Vec<_>>(),
                batch.len(),
                x.device(),
            )?;
            let mut xb = x.index_select(&idx, 0)?;
            let mut yb = y.index_select(&idx, 0)?;
            if config.flips {
                for dim in [2, 3] {
                    if rng.gen_bool(0.5) {
                        xb = flip(&xb, dim)?;
                        yb = flip(&yb, dim)?;
                    }
                }
            }
            let loss = seg_loss(&model.forward(&xb)?, &yb, config.loss_mix)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: epoch,
                    detail: format!("segmentation loss = {value}"),
                });
            }
            step(&mut opt, &loss)?;
            total += value * batch.len() as f64;
        }
        let mean = total / images.len() as f64;
        log::info!(
            "segmenter epoch {}/{}: loss {mean:.4}",
            epoch + 1,
            config.epochs
        );
        history.push(mean);
    }
    Ok((model.frozen()?, history))
}

/// Thresholded mask (`prob > threshold`) and the probability map.
pub fn predict_mask(
    segmenter: &dyn Segmenter,
    image: &Array3<f32>,
    threshold: f64,
) -> Result<(BinaryMask, Array2<f64>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let prob = segmenter.predict_prob(image)?;
    Ok((BinaryMask::threshold(&prob, threshold)?, prob))
}

/// Prediction for one test image.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: String,
    pub mask: BinaryMask,
    pub prob: Array2<f64>,
}

pub struct PipelineOutput {
    pub segmenter: UNet,
    pub history: Vec<f64>,
    /// Training images as seen by the segmenter (stylized when a mapper was given).
    pub train_images: Vec<Array3<f32>>,
    pub predictions: Vec<Prediction>,
}

/// Stylizes `images` in chunks of `chunk`.
pub fn stylize_images(
    mapper: &StyleMapper,
    images: &[&Array3<f32>],
    chunk: usize,
) -> Result<Vec<Array3<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for (k, part) in images.chunks(chunk.max(1)).enumerate() {
        let styled = mapper.stylize(&images_to_tensor(part)?)?;
        out.extend(tensor_to_images(&styled)?);
        log::debug!(
            "stylized {} / {}",
            (k * chunk.max(1) + part.len()).min(images.len()),
            images.len()
        );
    }
    Ok(out)
}

/// Optionally stylizes the labelled training set, trains a segmenter on it
/// and predicts every test image (test images are used as given).
pub fn run_pipeline(
    train_set: &[Sample],
    test_set: &[Sample],
    mapper: Option<&StyleMapper>,
    config: &SegConfig,
    threshold: f64,
) -> Result<PipelineOutput> {
    let masks = train_set
        .iter()
        .map(|s| {
            s.mask
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("training sample {} has no mask", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<&Array3<f32>> = train_set.iter().map(|s| &s.image).collect();
    let train_images = match mapper {
        Some(m) => stylize_images(m, &raw, 8)?,
        None => raw.iter().map(|&a| a.clone()).collect(),
    };
    let refs: Vec<&Array3<f32>> = train_images.iter().collect();
    let (segmenter, history) = train_segmenter(&refs, &masks, config, DType::F32)?;
    let predictions = test_set
        .iter()
        .map(|s| {
            let (mask, prob) = predict_mask(&segmenter, &s.image, threshold)?;
            Ok(Prediction {
                id: s.id.clone(),
                mask,
                prob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineOutput {
        segmenter,
        history,
        train_images,
        predictions,
    })
}
