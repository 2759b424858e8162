//! Desk-scale two-domain experiment and the structure check on its
//! stylized images.

use std::sync::OnceLock;

use candle_core::DType;
use ndarray::{Array2, Array3};
use stylseg::data::{generate_mixed, generate_synthetic, images_to_tensor, Sample, SynthConfig};
use stylseg::diffusion::{train_diffae, DiffAEModel, DiffAETrainConfig, NetConfig, ScheduleConfig};
use stylseg::embedding::{train_embedder, ConvEmbedder, EmbedderConfig, EmbedderTrainConfig};
use stylseg::metrics::{evaluate_all, BinaryMask};
use stylseg::segmentation::{run_pipeline, stylize_images, SegConfig};
use stylseg::style::{train_style_mapper, StyleConfig, StyleMapper};

use super::{err, Outcome};

const IMAGE_SIZE: usize = 64;
const POOL: usize = 300;
const TRAIN: usize = 200;
const TEST: usize = 20;
const SEEDS: [u64; 3] = [1, 2, 3];
const THRESHOLD: f64 = 0.5;

struct Pretrained {
    source: DiffAEModel,
    embedder: ConvEmbedder,
}

static PRETRAINED: OnceLock<Pretrained> = OnceLock::new();
static STYLIZED: OnceLock<Vec<(Array3<f32>, BinaryMask)>> = OnceLock::new();

fn pretrained() -> &'static Pretrained {
    PRETRAINED.get_or_init(|| {
        let pool = generate_mixed(&SynthConfig {
            count: POOL,
            image_size: IMAGE_SIZE,
            seed: 100,
            ..Default::default()
        })
        .expect("mixed pool");
        let x = images_to_tensor(&pool.iter().map(|s| &s.image).collect::<Vec<_>>())
            .expect("pool tensor");
        let train = DiffAETrainConfig {
            epochs: 20,
            batch_size: 12,
            learning_rate: 2e-3,
            seed: 0,
        };
        let trained = train_diffae(
            &x,
            &NetConfig::default(),
            &ScheduleConfig::default(),
            &train,
            DType::F32,
        )
        .expect("diffae pretraining");
        let emb_train = EmbedderTrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (embedder, _) = train_embedder(&x, &EmbedderConfig::default(), &emb_train, DType::F32)
            .expect("embedder pretraining");
        Pretrained {
            source: trained.model.frozen().expect("freeze"),
            embedder,
        }
    })
}

fn style_config(seed: u64) -> StyleConfig {
    StyleConfig {
        t1: 12,
        t2: 12,
        stride: 5,
        n: 1,
        learning_rate: 1e-2,
        lambda3: 0.1,
        seed,
        ..Default::default()
    }
}

fn seg_config(seed: u64) -> SegConfig {
    SegConfig {
        epochs: 8,
        width: 8,
        learning_rate: 2e-3,
        seed,
        ..Default::default()
    }
}

struct Domains {
    source: Vec<Sample>,
    target: Vec<Sample>,
}

fn domains(seed: u64) -> Result<Domains, String> {
    let (source, target) = generate_synthetic(&SynthConfig {
        count: TRAIN,
        image_size: IMAGE_SIZE,
        seed,
        ..Default::default()
    })
    .map_err(err)?;
    Ok(Domains { source, target })
}

fn mapper_for(seed: u64, d: &Domains) -> Result<StyleMapper, String> {
    let p = pretrained();
    let x_a = images_to_tensor(&[&d.source[0].image]).map_err(err)?;
    let y_b = images_to_tensor(&[&d.target[TRAIN / 2].image]).map_err(err)?;
    train_style_mapper(&x_a, &y_b, &p.source, &p.embedder, &style_config(seed)).map_err(err)
}

fn arm_scores(
    train: &[Sample],
    test: &[Sample],
    mapper: Option<&StyleMapper>,
    seed: u64,
) -> Result<(f64, f64, Vec<Array3<f32>>), String> {
    let out = run_pipeline(train, test, mapper, &seg_config(seed), THRESHOLD).map_err(err)?;
    let (mut dice, mut mae) = (0.0, 0.0);
    for (pred, sample) in out.predictions.iter().zip(test) {
        let r = evaluate_all(
            &pred.prob,
            sample.mask.as_ref().expect("synthetic masks"),
            THRESHOLD,
        )
        .map_err(err)?;
        dice += r.dice;
        mae += r.mae;
    }
    Ok((
        dice / test.len() as f64,
        mae / test.len() as f64,
        out.train_images,
    ))
}

pub fn criterion_experiment() -> Outcome {
    let (mut raw_dice, mut raw_mae, mut sty_dice, mut sty_mae) = (0.0, 0.0, 0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let d = domains(seed)?;
        let mapper = mapper_for(seed, &d)?;
        let test = &d.target[..TEST];
        let (rd, rm, _) = arm_scores(&d.source, test, None, seed)?;
        let (sd, sm, styled) = arm_scores(&d.source, test, Some(&mapper), seed)?;
        if seed == SEEDS[0] {
            let pairs = styled
                .into_iter()
                .zip(&d.source)
                .take(TEST)
                .map(|(i, s)| (i, s.mask.clone().unwrap()));
            let _ = STYLIZED.set(pairs.collect());
        }
        per_seed.push(format!(
            "seed {seed}: dice {rd:.3}->{sd:.3}, mae {rm:.4}->{sm:.4}"
        ));
        raw_dice += rd;
        raw_mae += rm;
        sty_dice += sd;
        sty_mae += sm;
    }
    let k = SEEDS.len() as f64;
    let (raw_dice, raw_mae, sty_dice, sty_mae) =
        (raw_dice / k, raw_mae / k, sty_dice / k, sty_mae / k);
    let detail = format!(
        "mean dice raw {raw_dice:.4} stylized {sty_dice:.4} (gain {:.4}), mean mae raw {raw_mae:.4} stylized {sty_mae:.4}; {}",
        sty_dice - raw_dice,
        per_seed.join("; ")
    );
    super::check(sty_dice - raw_dice >= 0.03 && sty_mae < raw_mae, detail)
}

/// Otsu threshold over a list of values (exact search between sorted
/// neighbours, maximizing between-class variance).
fn otsu(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    let (mut best, mut best_t, mut below) = (f64::NEG_INFINITY, v[0], 0.0);
    for i in 0..v.len() - 1 {
        below += v[i];
        if v[i] == v[i + 1] {
            continue;
        }
        let w0 = (i + 1) as f64 / n;
        let m0 = below / (i + 1) as f64;
        let m1 = (total - below) / (n - (i + 1) as f64);
        let between = w0 * (1.0 - w0) * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_t = (v[i] + v[i + 1]) / 2.0;
        }
    }
    best_t
}

/// Lesion support recovered from colour contrast alone: distance of each
/// pixel to the per-channel median colour, split by Otsu.
fn contrast_mask(image: &Array3<f32>) -> Array2<bool> {
    let (c, h, w) = image.dim();
    let median: Vec<f64> = (0..c)
        .map(|ch| {
            let mut v: Vec<f64> = image
                .index_axis(ndarray::Axis(0), ch)
                .iter()
                .map(|&x| x as f64)
                .collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v[v.len() / 2]
        })
        .collect();
    let dist = Array2::from_shape_fn((h, w), |(y, x)| {
        (0..c)
            .map(|ch| (image[[ch, y, x]] as f64 - median[ch]).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    let t = otsu(dist.as_slice().expect("contiguous"));
    dist.mapv(|d| d > t)
}

fn iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn criterion_structure() -> Outcome {
    let pairs = match STYLIZED.get() {
        Some(p) => p.clone(),
        None => {
            let seed = SEEDS[0];
            let d = domains(seed)?;
            let mapper = mapper_for(seed, &d)?;
            let images: Vec<_> = d.source[..TEST].iter().map(|s| &s.image).collect();
            let styled = stylize_images(&mapper, &images, 8).map_err(err)?;
            styled
                .into_iter()
                .zip(&d.source)
                .map(|(i, s)| (i, s.mask.clone().unwrap()))
                .collect()
        }
    };
    let scores: Vec<f64> = pairs
        .iter()
        .map(|(img, m)| iou(&contrast_mask(img), m.grid()))
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    super::check(
        mean >= 0.5,
        format!(
            "{} stylized images: mean IoU {mean:.3}, min {min:.3}",
            scores.len()
        ),
    )
}
