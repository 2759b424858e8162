use candle_core::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{adv_loss, cycle_loss_from, total_style_loss, StyleComponents, StyleLossRecord};
use super::mapper::{decode_with, invert_with, StyleMapper};
use super::StyleConfig;
use crate::diffusion::{to_image_space, to_model_space, DiffAEModel, LatentState};
use crate::embedding::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::nn::{adam, ensure_finite, randn, step};
use crate::spn::{spn_loss, Correction, SpnParams};

/// Fixed inputs of one style-training run: the one-shot pair, the frozen
/// source inversion of `x_A` and the reference embeddings.
pub struct StyleProblem<'a> {
    mapper: &'a StyleMapper,
    embedder: &'a dyn EmbeddingBackend,
    x_in: Tensor,
    y_b: Tensor,
    forward: Vec<LatentState>,
    e_x_in: Tensor,
    e_y_b: Tensor,
}

impl<'a> StyleProblem<'a> {
    /// `x_a`, `y_b`: single images `[1, c, h, w]` in [0, 1].
    pub fn new(
        mapper: &'a StyleMapper,
        embedder: &'a dyn EmbeddingBackend,
        x_a: &Tensor,
        y_b: &Tensor,
    ) -> Result<Self> {
        let source = mapper.source();
        let dtype = source.dtype();
        let x_in = to_model_space(&x_a.to_dtype(dtype)?)?;
        let y_b = to_model_space(&y_b.to_dtype(dtype)?)?;
        for t in [&x_in, &y_b] {
            source.check_image(t)?;
            if t.dim(0)? != 1 {
                return Err(Error::InvalidInput(
                    "style training takes exactly one image per domain".into(),
                ));
            }
        }
        let forward = invert_with(
            &x_in,
            source.denoiser(),
            &mapper.source_code(),
            &mapper.path(),
            source.schedule(),
        )?
        .into_iter()
        .map(|s| LatentState::new(s.x.detach(), s.t))
        .collect();
        let e_x_in = embedder.embed(&to_image_space(&x_in)?)?.detach();
        let e_y_b = embedder.embed(&to_image_space(&y_b)?)?.detach();
        Ok(Self {
            mapper,
            embedder,
            x_in,
            y_b,
            forward,
            e_x_in,
            e_y_b,
        })
    }

    /// Noised states of `x_A` along the frozen source inversion.
    pub fn forward_states(&self) -> &[LatentState] {
        &self.forward
    }

    /// `G(x_A)` in model space, graph-carrying.
    pub fn stylized_input(&self) -> Result<Tensor> {
        let m = self.mapper;
        let top = self
            .forward
            .last()
            .ok_or_else(|| Error::InvalidConfig("empty forward path".into()))?;
        decode_with(
            top,
            &self.x_in,
            &m.target,
            &m.target_code(),
            Some(&m.spn),
            &m.path(),
            m.source().schedule(),
        )
    }

    /// The SPN loss against the cached forward states.
    pub fn spn_term(&self, spn: &SpnParams) -> Result<Tensor> {
        let targets: Vec<Correction> = self
            .forward
            .iter()
            .map(|s| Correction(s.x.clone()))
            .collect();
        spn_loss(spn, &self.x_in, &targets)
    }

    /// Weighted loss for the current mapper parameters, given the
    /// source-style reference image `x_style` ([1, c, h, w] in [0, 1]).
    pub fn evaluate(
        &self,
        x_style: &Tensor,
        config: &StyleConfig,
    ) -> Result<(Tensor, StyleLossRecord)> {
        let m = self.mapper;
        let gx = self.stylized_input()?;
        let e_gx = self.embedder.embed(&to_image_space(&gx)?)?;
        let e_style = self
            .embedder
            .embed(&x_style.to_dtype(gx.dtype())?)?
            .detach();
        let adv = adv_loss(&self.e_x_in, &e_gx, &e_style, &self.e_y_b)?;

        let g = |t: &Tensor| to_image_space(&m.forward_g(&to_model_space(t)?, Some(&m.spn))?);
        let f = |t: &Tensor| to_image_space(&m.forward_f(&to_model_space(t)?)?);
        let cycle = cycle_loss_from(g, f, &to_image_space(&gx)?, &to_image_space(&self.y_b)?)?;

        let spn = self.spn_term(&m.spn)?;
        total_style_loss(&StyleComponents { adv, cycle, spn }, config)
    }
}

/// Source-style reference: a sample of the frozen source model decoded from
/// `z_A` and fresh Gaussian noise, in [0, 1].
fn source_style_sample(
    mapper: &StyleMapper,
    rng: &mut ChaCha8Rng,
    stride: usize,
) -> Result<Tensor> {
    let source = mapper.source();
    let [c, h, w] = source.image_shape();
    let noise = randn(rng, &[1, c, h, w], source.dtype())?;
    let x = source.generate_strided(&mapper.source_code(), &noise, stride)?;
    Ok(to_image_space(&x)?.detach())
}

impl StyleMapper {
    /// Untrained mapper: `z_B = Enc(y_b)`, zero SPN, target denoiser copied
    /// from the source.
    pub fn initialize(
        x_a: &Tensor,
        y_b: &Tensor,
        source: &DiffAEModel,
        config: &StyleConfig,
    ) -> Result<Self> {
        let source_hash = source.content_hash()?;
        let src = source.frozen()?;
        let dtype = src.dtype();
        let x_in = to_model_space(&x_a.to_dtype(dtype)?)?;
        let y_in = to_model_space(&y_b.to_dtype(dtype)?)?;
        src.check_image(&x_in)?;
        src.check_image(&y_in)?;
        let source_code = src.encode_semantic(&x_in)?.0.detach();
        let target_code = Var::from_tensor(&src.encode_semantic(&y_in)?.0.detach())?;
        let (target, target_params) = if config.train_target_denoiser {
            let (d, p) = src.copy_denoiser(true)?;
            (d, Some(p))
        } else {
            (src.copy_denoiser(false)?.0, None)
        };
        let c = src.config().channels;
        let spn = SpnParams::zeros(c, c, config.window(src.schedule()), dtype)?;
        Ok(StyleMapper {
            source: src,
            source_hash,
            target,
            target_params,
            target_code,
            source_code,
            spn,
            config: config.clone(),
            history: Vec::new(),
        })
    }

    /// Variables updated by style training.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = vec![self.target_code.clone()];
        vars.extend(self.spn.vars());
        if let Some(p) = &self.target_params {
            vars.extend(p.vars());
        }
        vars
    }
}

/// One-shot style training: `x_a` (source) and `y_b` (target) are single
/// images `[1, c, h, w]` in [0, 1]. Only `z_B`, the SPN and (when enabled)
/// the target denoiser are updated.
pub fn train_style_mapper(
    x_a: &Tensor,
    y_b: &Tensor,
    source: &DiffAEModel,
    embedder: &dyn EmbeddingBackend,
    config: &StyleConfig,
) -> Result<StyleMapper> {
    config.validate(source.schedule())?;
    if config.lambda1 == 0.0 && config.lambda2 == 0.0 && config.lambda3 == 0.0 {
        return Err(Error::InvalidConfig(
            "at least one loss weight must be positive".into(),
        ));
    }
    let mut mapper = StyleMapper::initialize(x_a, y_b, source, config)?;
    let vars = mapper.trainable_vars();
    let mut opt = adam(vars.clone(), config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.n);
    {
        let problem = StyleProblem::new(&mapper, embedder, x_a, y_b)?;
        for iter in 0..config.n {
            let x_style = source_style_sample(&mapper, &mut rng, config.stride)?;
            let (loss, record) = match problem.evaluate(&x_style, config) {
                Ok(v) => v,
                Err(Error::NonFinite(detail)) => {
                    return Err(Error::NonFiniteLoss { step: iter, detail });
                }
                Err(e) => return Err(e),
            };
            if !record.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: iter,
                    detail: format!(
                        "adv = {}, cycle = {}, spn = {}",
                        record.adv, record.cycle, record.spn
                    ),
                });
            }
            step(&mut opt, &loss)?;
            for v in &vars {
                ensure_finite(v.as_tensor(), "style parameter update").map_err(|_| {
                    Error::NonFiniteLoss {
                        step: iter,
                        detail: format!(
                            "parameters diverged after adv = {}, cycle = {}, spn = {}",
                            record.adv, record.cycle, record.spn
                        ),
                    }
                })?;
            }
            log::debug!(
                "style iter {iter}: total {:.5} adv {:.5} cycle {:.5} spn {:.5}",
                record.total,
                record.adv,
                record.cycle,
                record.spn
            );
            history.push(record);
        }
    }
    mapper.history = history;
    Ok(mapper)
}
