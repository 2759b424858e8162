//! Segmentation metrics: overlap counts (Dice, IoU, specificity), MAE and
//! the structural measures (weighted F, S-measure, max E-measure).
//!
//! Probability maps are `Array2<f64>` with values in [0, 1]; ground truth is
//! a [`BinaryMask`].

mod batch;
mod structural;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use batch::{
    evaluate_dirs, mean_report, read_report_csv, write_mean_csv, write_per_sample_csv,
    METRIC_COLUMNS,
};
pub use structural::{e_measure_max, s_measure, weighted_fbeta};

use crate::error::{Error, Result};

/// Boolean grid `[height, width]` with nonzero dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Array2<bool>,
}

impl BinaryMask {
    pub fn new(grid: Array2<bool>) -> Result<Self> {
        if grid.nrows() == 0 || grid.ncols() == 0 {
            return Err(Error::InvalidInput(
                "mask must have nonzero dimensions".into(),
            ));
        }
        Ok(Self { grid })
    }

    /// Builds a mask from row-major values.
    pub fn from_vec(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        let grid = Array2::from_shape_vec((height, width), values)
            .map_err(|e| Error::InvalidInput(format!("mask of {height}x{width}: {e}")))?;
        Self::new(grid)
    }

    /// `prob > threshold` elementwise.
    pub fn threshold(prob: &Array2<f64>, threshold: f64) -> Result<Self> {
        Self::new(prob.mapv(|p| p > threshold))
    }

    pub fn grid(&self) -> &Array2<bool> {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|v| **v).count()
    }

    /// 0.0 / 1.0 copy.
    pub fn to_f64(&self) -> Array2<f64> {
        self.grid.mapv(|v| if v { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// One row of the metric table; every value lies in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub iou: f64,
    pub specificity: f64,
    pub f_beta_w: f64,
    pub s_alpha: f64,
    pub e_phi_max: f64,
    pub mae: f64,
}

impl MetricReport {
    /// Values in table order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.dice,
            self.iou,
            self.specificity,
            self.f_beta_w,
            self.s_alpha,
            self.e_phi_max,
            self.mae,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            dice: v[0],
            iou: v[1],
            specificity: v[2],
            f_beta_w: v[3],
            s_alpha: v[4],
            e_phi_max: v[5],
            mae: v[6],
        }
    }

    /// Radar axes: the first six values and `1 - mae`.
    pub fn radar(&self) -> [f64; 7] {
        let mut v = self.values();
        v[6] = 1.0 - self.mae;
        v
    }
}

pub(crate) fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: vec![b.0, b.1],
            got: vec![a.0, a.1],
        });
    }
    Ok(())
}

pub(crate) fn check_prob(prob: &Array2<f64>, gt: &BinaryMask) -> Result<()> {
    check_shapes(prob.dim(), gt.shape())?;
    if let Some(p) = prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    check_shapes(pred.shape(), gt.shape())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.grid.iter().zip(gt.grid.iter()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `2 TP / (2 TP + FP + FN)`; 1 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / den as f64
    })
}

/// `TP / (TP + FP + FN)`; 1 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    let den = c.tp + c.fp + c.fn_;
    Ok(if den == 0 {
        1.0
    } else {
        c.tp as f64 / den as f64
    })
}

/// `TN / (TN + FP)`; 1 when the ground truth has no negatives.
pub fn specificity(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = confusion(pred, gt)?;
    let den = c.tn + c.fp;
    Ok(if den == 0 {
        1.0
    } else {
        c.tn as f64 / den as f64
    })
}

/// Mean absolute difference between `prob` and the 0/1 ground truth.
pub fn mae(prob: &Array2<f64>, gt: &BinaryMask) -> Result<f64> {
    check_prob(prob, gt)?;
    let sum: f64 = prob
        .iter()
        .zip(gt.grid.iter())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / prob.len() as f64)
}

/// All seven metrics; overlap metrics use `prob > threshold`.
pub fn evaluate_all(prob: &Array2<f64>, gt: &BinaryMask, threshold: f64) -> Result<MetricReport> {
    check_prob(prob, gt)?;
    let pred = BinaryMask::threshold(prob, threshold)?;
    Ok(MetricReport {
        dice: dice(&pred, gt)?,
        iou: iou(&pred, gt)?,
        specificity: specificity(&pred, gt)?,
        f_beta_w: weighted_fbeta(prob, gt)?,
        s_alpha: s_measure(prob, gt, 0.5)?,
        e_phi_max: e_measure_max(prob, gt, 256)?,
        mae: mae(prob, gt)?,
    })
}
