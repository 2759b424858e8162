use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative signal coefficients `alpha_bar[t]` for `t = 0..=T`.
///
/// Construction validates the invariants every stepping operation relies on:
/// `alpha_bar[0]` within 1e-4 of one, strictly decreasing, positive at `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

/// Parameters of a linear-beta schedule.
///
/// With `rescale` set, `beta_start`/`beta_end` are read in the 1000-step
/// parameterization and multiplied by `1000 / steps`, so a short chain
/// reaches the same terminal noise level as the long one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub rescale: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            rescale: true,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let scale = if self.rescale {
            1000.0 / self.steps.max(1) as f64
        } else {
            1.0
        };
        NoiseSchedule::linear(self.steps, self.beta_start * scale, self.beta_end * scale)
    }
}

impl NoiseSchedule {
    /// `alpha_bar[t] = prod_{i<=t} (1 - beta_i)` with beta linear from
    /// `beta_start` (i = 1) to `beta_end` (i = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("step count must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let frac = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        let schedule = Self { alpha_bar };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Skips the strict-monotonicity check; only for exercising the
    /// flat-segment corner of the stepping algebra in unit tests.
    #[cfg(test)]
    pub(crate) fn unchecked(alpha_bar: Vec<f64>) -> Self {
        Self { alpha_bar }
    }

    fn validate(&self) -> Result<()> {
        let ab = &self.alpha_bar;
        if ab.len() < 2 {
            return Err(Error::InvalidSchedule(
                "need at least one diffusion step".into(),
            ));
        }
        if !(ab[0] > 1.0 - 1e-4 && ab[0] <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar[0] = {} not in (1-1e-4, 1]",
                ab[0]
            )));
        }
        if let Some(t) = ab.windows(2).position(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar not strictly decreasing at t = {}",
                t + 1
            )));
        }
        let last = *ab.last().unwrap();
        if !(last > 0.0 && last.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar[T] = {last} must be positive"
            )));
        }
        Ok(())
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 0,
                hi: self.steps(),
            });
        }
        Ok(())
    }
}
