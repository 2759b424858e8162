//! One-shot training of the source-to-target style mapper and the
//! `stylize` operation used before segmentation training.

mod loss;
mod mapper;
mod train;

use serde::{Deserialize, Serialize};

pub use loss::{
    adv_loss, cycle_loss_from, cycle_loss_with, total_style_loss, weighted_total, StyleComponents,
    StyleLossRecord,
};
pub use mapper::{
    decode_with, inverse_with, invert_with, stylize_with, StyleCheckpoint, StyleMapper, StylePath,
    STYLE_FORMAT,
};
pub use train::{train_style_mapper, StyleProblem};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Forward (inversion) moves.
    pub t1: usize,
    /// Reverse moves.
    pub t2: usize,
    /// Outer iterations.
    pub n: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Timesteps per forward move; also the stride used to generate the
    /// source-style reference image.
    pub stride: usize,
    /// Reverse timesteps `[lo, hi]` receiving the SPN correction; all steps
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spn_window: Option<[usize; 2]>,
    pub train_target_denoiser: bool,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            t1: 40,
            t2: 40,
            n: 400,
            learning_rate: 1e-3,
            seed: 0,
            stride: 1,
            spn_window: None,
            train_target_denoiser: false,
        }
    }
}

impl StyleConfig {
    pub fn path(&self) -> StylePath {
        StylePath {
            t1: self.t1,
            t2: self.t2,
            stride: self.stride,
        }
    }

    pub fn window(&self, schedule: &NoiseSchedule) -> (usize, usize) {
        match self.spn_window {
            Some([lo, hi]) => (lo, hi),
            None => (1, schedule.steps()),
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        for (name, l) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {l} must be a nonnegative number"
                )));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        self.path().validate(schedule)?;
        if schedule.steps() % self.stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "stride {} does not divide T = {}",
                self.stride,
                schedule.steps()
            )));
        }
        let (lo, hi) = self.window(schedule);
        if lo == 0 || lo > hi || hi > schedule.steps() {
            return Err(Error::InvalidConfig(format!(
                "spn_window [{lo}, {hi}] must satisfy 1 <= lo <= hi <= T"
            )));
        }
        Ok(())
    }
}
