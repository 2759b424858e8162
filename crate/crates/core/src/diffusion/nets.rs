//! Desk-scale networks of the diffusion autoencoder: a residual conv noise
//! predictor with sinusoidal time embedding and additive semantic
//! conditioning, and a conv semantic encoder with global pooling.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::step::{Denoiser, SemanticCode};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, silu, timestep_embedding, Conv2d, Init, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub channels: usize,
    pub image_size: usize,
    /// Feature width at full resolution; the half-resolution trunk uses twice this.
    pub width: usize,
    pub res_blocks: usize,
    pub emb_dim: usize,
    pub code_dim: usize,
    /// Base width of the semantic encoder.
    pub encoder_width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            image_size: 64,
            width: 8,
            res_blocks: 2,
            emb_dim: 32,
            code_dim: 64,
            encoder_width: 8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.channels,
            self.image_size,
            self.width,
            self.emb_dim,
            self.code_dim,
            self.encoder_width,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig(
                "network sizes must be positive".into(),
            ));
        }
        if self.image_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} must be even",
                self.image_size
            )));
        }
        if self.emb_dim % 2 != 0 {
            return Err(Error::InvalidConfig("emb_dim must be even".into()));
        }
        Ok(())
    }
}

/// Noise predictor `eps_theta(x_t, t, z_sem)`.
#[derive(Debug, Clone)]
pub struct ConvDenoiser {
    config: NetConfig,
    time1: Linear,
    time2: Linear,
    cond: Linear,
    conv_in: Conv2d,
    down: Conv2d,
    blocks: Vec<ResBlock>,
    up: Conv2d,
    up_emb: Linear,
    mid: Conv2d,
    conv_out: Conv2d,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv_a: Conv2d,
    conv_b: Conv2d,
    emb: Linear,
}

impl ConvDenoiser {
    /// Writes freshly initialized parameters under `prefix` into `store`.
    pub fn init(
        config: &NetConfig,
        store: &mut ParamStore,
        init: &mut Init<'_>,
        prefix: &str,
    ) -> Result<()> {
        config.validate()?;
        let (c, w, e) = (config.channels, config.width, config.emb_dim);
        let p = |s: &str| format!("{prefix}{s}");
        Linear::init(store, init, &p("time1"), e, e, 1.0)?;
        Linear::init(store, init, &p("time2"), e, e, 1.0)?;
        Linear::init(store, init, &p("cond"), config.code_dim, e, 1.0)?;
        Conv2d::init(store, init, &p("conv_in"), c, w, 3, 1.0)?;
        Conv2d::init(store, init, &p("down"), w, 2 * w, 3, 1.0)?;
        for i in 0..config.res_blocks {
            Conv2d::init(
                store,
                init,
                &p(&format!("block{i}.conv_a")),
                2 * w,
                2 * w,
                3,
                1.0,
            )?;
            Conv2d::init(
                store,
                init,
                &p(&format!("block{i}.conv_b")),
                2 * w,
                2 * w,
                3,
                0.1,
            )?;
            Linear::init(store, init, &p(&format!("block{i}.emb")), e, 2 * w, 1.0)?;
        }
        Conv2d::init(store, init, &p("up"), 2 * w, w, 3, 1.0)?;
        Linear::init(store, init, &p("up_emb"), e, w, 1.0)?;
        Conv2d::init(store, init, &p("mid"), 2 * w, w, 3, 1.0)?;
        Conv2d::init(store, init, &p("conv_out"), w, c, 3, 0.1)?;
        Ok(())
    }

    pub fn load(
        config: &NetConfig,
        store: &ParamStore,
        prefix: &str,
        trainable: bool,
    ) -> Result<Self> {
        let p = |s: &str| format!("{prefix}{s}");
        let blocks = (0..config.res_blocks)
            .map(|i| {
                Ok(ResBlock {
                    conv_a: Conv2d::load(store, &p(&format!("block{i}.conv_a")), 1, 1, trainable)?,
                    conv_b: Conv2d::load(store, &p(&format!("block{i}.conv_b")), 1, 1, trainable)?,
                    emb: Linear::load(store, &p(&format!("block{i}.emb")), trainable)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            time1: Linear::load(store, &p("time1"), trainable)?,
            time2: Linear::load(store, &p("time2"), trainable)?,
            cond: Linear::load(store, &p("cond"), trainable)?,
            conv_in: Conv2d::load(store, &p("conv_in"), 1, 1, trainable)?,
            down: Conv2d::load(store, &p("down"), 2, 1, trainable)?,
            blocks,
            up: Conv2d::load(store, &p("up"), 1, 1, trainable)?,
            up_emb: Linear::load(store, &p("up_emb"), trainable)?,
            mid: Conv2d::load(store, &p("mid"), 1, 1, trainable)?,
            conv_out: Conv2d::load(store, &p("conv_out"), 1, 1, trainable)?,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Batched forward pass with one timestep per sample.
    pub fn forward(&self, x: &Tensor, ts: &[usize], code: Option<&Tensor>) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.config.channels || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.config.channels, h - h % 2, w - w % 2],
                got: x.dims().to_vec(),
            });
        }
        if ts.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} timesteps for a batch of {n}",
                ts.len()
            )));
        }
        let temb = timestep_embedding(ts, self.config.emb_dim, x.dtype())?;
        let mut emb = self.time2.forward(&silu(&self.time1.forward(&temb)?)?)?;
        if let Some(z) = code {
            let d = z.dims().last().copied().unwrap_or(0);
            if d != self.config.code_dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![self.config.code_dim],
                    got: vec![d],
                });
            }
            emb = emb.broadcast_add(&self.cond.forward(z)?)?;
        }
        let emb = silu(&emb)?;

        let h0 = self.conv_in.forward(x)?;
        let mut hid = self.down.forward(&silu(&h0)?)?;
        for block in &self.blocks {
            let bias = block.emb.forward(&emb)?.unsqueeze(2)?.unsqueeze(3)?;
            let r = block.conv_a.forward(&silu(&hid)?)?.broadcast_add(&bias)?;
            let r = block.conv_b.forward(&silu(&r)?)?;
            hid = (hid + r)?;
        }
        let u = self.up.forward(&silu(&hid)?)?.upsample_nearest2d(h, w)?;
        let u = u.broadcast_add(&self.up_emb.forward(&emb)?.unsqueeze(2)?.unsqueeze(3)?)?;
        let m = self.mid.forward(&silu(&Tensor::cat(&[&u, &h0], 1)?)?)?;
        self.conv_out.forward(&silu(&m)?)
    }
}

impl Denoiser for ConvDenoiser {
    fn eps(&self, x: &Tensor, t: usize, code: Option<&SemanticCode>) -> Result<Tensor> {
        let n = x.dim(0)?;
        self.forward(x, &vec![t; n], code.map(SemanticCode::tensor))
    }
}

/// Semantic encoder `Enc_phi`: image -> z_sem of dimension `code_dim`.
#[derive(Debug, Clone)]
pub struct SemanticEncoder {
    config: NetConfig,
    convs: [Conv2d; 3],
    head: Linear,
}

impl SemanticEncoder {
    pub fn init(
        config: &NetConfig,
        store: &mut ParamStore,
        init: &mut Init<'_>,
        prefix: &str,
    ) -> Result<()> {
        config.validate()?;
        let (c, w) = (config.channels, config.encoder_width);
        Conv2d::init(store, init, &format!("{prefix}conv0"), c, w, 3, 1.0)?;
        Conv2d::init(store, init, &format!("{prefix}conv1"), w, 2 * w, 3, 1.0)?;
        Conv2d::init(store, init, &format!("{prefix}conv2"), 2 * w, 2 * w, 3, 1.0)?;
        Linear::init(
            store,
            init,
            &format!("{prefix}head"),
            2 * w,
            config.code_dim,
            1.0,
        )?;
        Ok(())
    }

    pub fn load(
        config: &NetConfig,
        store: &ParamStore,
        prefix: &str,
        trainable: bool,
    ) -> Result<Self> {
        let conv = |i: usize| Conv2d::load(store, &format!("{prefix}conv{i}"), 2, 1, trainable);
        Ok(Self {
            config: config.clone(),
            convs: [conv(0)?, conv(1)?, conv(2)?],
            head: Linear::load(store, &format!("{prefix}head"), trainable)?,
        })
    }

    /// `x`: [n, c, h, w] -> [n, code_dim]
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = silu(&conv.forward(&h)?)?;
        }
        self.head.forward(&global_avg_pool(&h)?)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }
}

/// Builds freshly initialized networks in `dtype`; used by the training
/// routines and tests.
pub fn init_store(config: &NetConfig, seed: u64, dtype: DType) -> Result<ParamStore> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut init = Init {
        rng: &mut rng,
        dtype,
    };
    SemanticEncoder::init(config, &mut store, &mut init, "enc.")?;
    ConvDenoiser::init(config, &mut store, &mut init, "den.")?;
    Ok(store)
}
