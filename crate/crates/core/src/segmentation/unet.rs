use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Segmenter;
use crate::diffusion::{content_hash, dtype_name, parse_dtype};
use crate::error::{Error, Result};
use crate::nn::{ensure_finite, sigmoid, silu, Conv2d, Init, ParamStore, TensorRecord};

pub const SEGMENTER_FORMAT: &str = "stylseg/segmenter/v1";

/// Blocks in order: two encoder levels, bottleneck, two decoder levels.
const BLOCKS: [&str; 5] = ["enc0", "enc1", "mid", "dec1", "dec0"];

/// Three-level U-Net: double 3x3 conv blocks, 2x average pooling,
/// nearest upsampling, skip concatenation and a sigmoid 1x1 head.
#[derive(Clone)]
pub struct UNet {
    in_channels: usize,
    width: usize,
    params: ParamStore,
    convs: Vec<(Conv2d, Conv2d)>,
    head: Conv2d,
}

fn block_channels(c: usize, w: usize) -> [(usize, usize); 5] {
    [
        (c, w),
        (w, 2 * w),
        (2 * w, 4 * w),
        (6 * w, 2 * w),
        (3 * w, w),
    ]
}

impl UNet {
    pub fn new(in_channels: usize, width: usize, seed: u64, dtype: DType) -> Result<Self> {
        if in_channels == 0 || width == 0 {
            return Err(Error::InvalidConfig(
                "U-Net channels and width must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            rng: &mut rng,
            dtype,
        };
        let mut store = ParamStore::new();
        for (name, (ci, co)) in BLOCKS.iter().zip(block_channels(in_channels, width)) {
            Conv2d::init(
                &mut store,
                &mut init,
                &format!("{name}.a"),
                ci,
                co,
                3,
                3f64.sqrt(),
            )?;
            Conv2d::init(
                &mut store,
                &mut init,
                &format!("{name}.b"),
                co,
                co,
                3,
                3f64.sqrt(),
            )?;
        }
        Conv2d::init(&mut store, &mut init, "head", width, 1, 1, 1.0)?;
        Self::from_params(in_channels, width, store, true)
    }

    fn from_params(
        in_channels: usize,
        width: usize,
        params: ParamStore,
        trainable: bool,
    ) -> Result<Self> {
        let convs = BLOCKS
            .iter()
            .map(|name| {
                Ok((
                    Conv2d::load(&params, &format!("{name}.a"), 1, 1, trainable)?,
                    Conv2d::load(&params, &format!("{name}.b"), 1, 1, trainable)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::load(&params, "head", 1, 0, trainable)?;
        Ok(Self {
            in_channels,
            width,
            params,
            convs,
            head,
        })
    }

    /// Copy whose weights are detached from the autograd graph.
    pub fn frozen(&self) -> Result<Self> {
        Self::from_params(
            self.in_channels,
            self.width,
            self.params.deep_copy()?,
            false,
        )
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub(crate) fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "U-Net input {h}x{w} must be a positive multiple of 4"
            )));
        }
        Ok(())
    }

    fn block(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let (a, b) = &self.convs[i];
        silu(&b.forward(&silu(&a.forward(x)?)?)?)
    }

    /// `[n, c, h, w]` in [0, 1] to `[n, 1, h, w]` probabilities, differentiable.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![self.in_channels],
                got: vec![c],
            });
        }
        self.check_input_size(h, w)?;
        let x = x.affine(2.0, -1.0)?;
        let e0 = self.block(0, &x)?;
        let e1 = self.block(1, &e0.avg_pool2d(2)?)?;
        let m = self.block(2, &e1.avg_pool2d(2)?)?;
        let d1 = self.block(
            3,
            &Tensor::cat(&[&m.upsample_nearest2d(h / 2, w / 2)?, &e1], 1)?,
        )?;
        let d0 = self.block(4, &Tensor::cat(&[&d1.upsample_nearest2d(h, w)?, &e0], 1)?)?;
        sigmoid(&self.head.forward(&d0)?)
    }

    pub fn to_checkpoint(&self) -> Result<SegCheckpoint> {
        let dtype = self
            .params
            .vars()
            .first()
            .map(|v| v.dtype())
            .unwrap_or(DType::F32);
        Ok(SegCheckpoint {
            format: SEGMENTER_FORMAT.into(),
            in_channels: self.in_channels,
            width: self.width,
            dtype: dtype_name(dtype).into(),
            params: self.params.to_records()?,
        })
    }

    pub fn from_checkpoint(ckpt: &SegCheckpoint) -> Result<Self> {
        if ckpt.format != SEGMENTER_FORMAT {
            return Err(Error::Checkpoint(format!(
                "expected format `{SEGMENTER_FORMAT}`, found `{}`",
                ckpt.format
            )));
        }
        let dtype = parse_dtype(&ckpt.dtype)?;
        let params = ParamStore::from_records(&ckpt.params, dtype)?;
        params.check_layout(Self::new(ckpt.in_channels, ckpt.width, 0, dtype)?.params())?;
        Self::from_params(ckpt.in_channels, ckpt.width, params, false)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = serde_json::to_vec(&self.to_checkpoint()?)?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(content_hash(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: SegCheckpoint = serde_json::from_slice(&bytes)?;
        Ok((Self::from_checkpoint(&ckpt)?, content_hash(&bytes)))
    }
}

impl Segmenter for UNet {
    fn predict_batch(&self, images: &Tensor) -> Result<Tensor> {
        let dtype = self
            .params
            .vars()
            .first()
            .map(|v| v.dtype())
            .unwrap_or(DType::F32);
        let p = self.forward(&images.to_dtype(dtype)?)?.detach();
        ensure_finite(&p, "segmenter prediction")?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegCheckpoint {
    pub format: String,
    pub in_channels: usize,
    pub width: usize,
    pub dtype: String,
    pub params: BTreeMap<String, TensorRecord>,
}
