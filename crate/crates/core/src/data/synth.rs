use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Colours and texture of one domain. Colours are RGB in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleDescriptor {
    pub background: [f64; 3],
    pub lesion: [f64; 3],
    /// Per-image uniform colour offset amplitude.
    pub jitter: f64,
    /// Amplitude of the low-frequency background shading.
    pub texture: f64,
    /// Maximum spatial frequency of the shading, in cycles per image.
    pub texture_freq: f64,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise: f64,
}

impl StyleDescriptor {
    pub fn source_default() -> Self {
        Self {
            background: [0.92, 0.64, 0.60],
            lesion: [0.55, 0.25, 0.22],
            jitter: 0.04,
            texture: 0.05,
            texture_freq: 3.0,
            noise: 0.02,
        }
    }

    pub fn target_default() -> Self {
        Self {
            background: [0.78, 0.80, 0.70],
            lesion: [0.90, 0.62, 0.58],
            jitter: 0.04,
            texture: 0.05,
            texture_freq: 3.0,
            noise: 0.02,
        }
    }

    fn lerp(&self, other: &Self, u: f64) -> Self {
        let l = |a: f64, b: f64| a + (b - a) * u;
        let l3 = |a: [f64; 3], b: [f64; 3]| [l(a[0], b[0]), l(a[1], b[1]), l(a[2], b[2])];
        Self {
            background: l3(self.background, other.background),
            lesion: l3(self.lesion, other.lesion),
            jitter: l(self.jitter, other.jitter),
            texture: l(self.texture, other.texture),
            texture_freq: l(self.texture_freq, other.texture_freq),
            noise: l(self.noise, other.noise),
        }
    }
}

/// Lesion geometry: a union of `count_min..=count_max` ellipses with radii
/// given as fractions of the image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionDescriptor {
    pub radius_min: f64,
    pub radius_max: f64,
    pub count_min: usize,
    pub count_max: usize,
}

impl Default for LesionDescriptor {
    fn default() -> Self {
        Self {
            radius_min: 0.10,
            radius_max: 0.22,
            count_min: 1,
            count_max: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Samples per domain.
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub source: StyleDescriptor,
    pub target: StyleDescriptor,
    pub lesion: LesionDescriptor,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 200,
            image_size: 64,
            seed: 0,
            source: StyleDescriptor::source_default(),
            target: StyleDescriptor::target_default(),
            lesion: LesionDescriptor::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lesion;
        if self.count == 0 || self.image_size < 8 {
            return Err(Error::InvalidConfig(
                "count must be >= 1 and image_size >= 8".into(),
            ));
        }
        if !(l.radius_min > 0.0 && l.radius_min <= l.radius_max && l.radius_max < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "lesion radius range [{}, {}] must satisfy 0 < min <= max < 0.5",
                l.radius_min, l.radius_max
            )));
        }
        if l.count_min == 0 || l.count_min > l.count_max {
            return Err(Error::InvalidConfig(format!(
                "lesion count range [{}, {}] must satisfy 1 <= min <= max",
                l.count_min, l.count_max
            )));
        }
        for s in [&self.source, &self.target] {
            let vals = s.background.iter().chain(&s.lesion);
            if vals.clone().any(|v| !(0.0..=1.0).contains(v))
                || s.jitter < 0.0
                || s.texture < 0.0
                || s.noise < 0.0
            {
                return Err(Error::InvalidConfig(
                    "style colours must lie in [0, 1] and amplitudes be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Draws a lesion support: union of rotated ellipses around a common centre.
fn lesion_mask(rng: &mut ChaCha8Rng, size: usize, desc: &LesionDescriptor) -> Array2<bool> {
    let s = size as f64;
    let r_max = desc.radius_max * s;
    let cx = rng.gen_range(r_max..=s - r_max);
    let cy = rng.gen_range(r_max..=s - r_max);
    let k = rng.gen_range(desc.count_min..=desc.count_max);
    let mut parts = Vec::with_capacity(k);
    for i in 0..k {
        let rx = rng.gen_range(desc.radius_min..=desc.radius_max) * s;
        let ry = rng.gen_range(desc.radius_min..=desc.radius_max) * s;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let (ox, oy) = if i == 0 {
            (0.0, 0.0)
        } else {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let d = rng.gen_range(0.3..0.7) * rx.min(ry);
            (d * a.cos(), d * a.sin())
        };
        parts.push((cx + ox, cy + oy, rx, ry, theta));
    }
    Array2::from_shape_fn((size, size), |(y, x)| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        parts.iter().any(|&(cx, cy, rx, ry, t)| {
            let (dx, dy) = (px - cx, py - cy);
            let u = dx * t.cos() + dy * t.sin();
            let v = -dx * t.sin() + dy * t.cos();
            (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
        })
    })
}

/// Composites a lesion over a textured background in the given style.
fn render(rng: &mut ChaCha8Rng, mask: &Array2<bool>, style: &StyleDescriptor) -> Array3<f32> {
    let size = mask.nrows();
    let offset: f64 = rng.gen_range(-1.0..=1.0) * style.jitter;
    let lesion_offset: f64 = rng.gen_range(-1.0..=1.0) * style.jitter;
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = rng.gen_range(-style.texture_freq..=style.texture_freq);
            let fy = rng.gen_range(-style.texture_freq..=style.texture_freq);
            (fx, fy, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let shade = Array2::from_shape_fn((size, size), |(y, x)| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        waves
            .iter()
            .map(|&(fx, fy, p)| (std::f64::consts::TAU * (fx * u + fy * v) + p).sin())
            .sum::<f64>()
            / 3.0
    });
    let mut img = Array3::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let inside = mask[[y, x]];
            for c in 0..3 {
                let base = if inside {
                    style.lesion[c] + lesion_offset
                } else {
                    style.background[c] + offset
                };
                let n: f64 = rng.sample(StandardNormal);
                let v = base + style.texture * shade[[y, x]] + style.noise * n;
                img[[c, y, x]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

fn domain(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    prefix: &str,
    tag: &str,
    style: impl Fn(&mut ChaCha8Rng) -> StyleDescriptor,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mask = lesion_mask(rng, config.image_size, &config.lesion);
        let s = style(rng);
        let image = render(rng, &mask, &s);
        out.push(Sample {
            id: format!("{prefix}_{i:04}"),
            image,
            mask: Some(BinaryMask::new(mask)?),
            domain_tag: tag.to_string(),
        });
    }
    Ok(out)
}

/// Source and target samples (`count` each) with identical lesion geometry
/// distributions and domain-specific styles.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let src = domain(&mut rng, config, "src", "source", |_| config.source.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let tgt = domain(&mut rng, config, "tgt", "target", |_| config.target.clone())?;
    Ok((src, tgt))
}

/// Unlabelled-style pool whose per-image style interpolates uniformly
/// between the source and target descriptors.
pub fn generate_mixed(config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    domain(&mut rng, config, "mix", "mixed", |r| {
        let u = r.gen_range(0.0..=1.0);
        config.source.lerp(&config.target, u)
    })
}
