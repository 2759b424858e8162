//! Central finite differences against autograd for the style losses, in
//! double precision on a tiny model.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylseg::diffusion::{DiffAEModel, NetConfig, ScheduleConfig};
use stylseg::embedding::{ConvEmbedder, EmbedderConfig};
use stylseg::nn::scalar;
use stylseg::style::{StyleConfig, StyleMapper, StyleProblem};

const H: f64 = 1e-6;

fn image(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..3 * 64).map(|_| rng.gen_range(0.05..0.95)).collect();
    Tensor::from_vec(v, (1, 3, 8, 8), &Device::Cpu).unwrap()
}

fn setup(config: &StyleConfig) -> (DiffAEModel, ConvEmbedder) {
    let net = NetConfig {
        channels: 3,
        image_size: 8,
        width: 4,
        res_blocks: 1,
        emb_dim: 8,
        code_dim: 6,
        encoder_width: 4,
    };
    let sched = ScheduleConfig {
        steps: 10,
        beta_start: 0.01,
        beta_end: 0.3,
        rescale: false,
    };
    let source = DiffAEModel::new(net, sched, 3, DType::F64).unwrap();
    let emb = ConvEmbedder::new(
        EmbedderConfig {
            channels: 3,
            width: 4,
            dim: 8,
        },
        7,
        DType::F64,
    )
    .unwrap()
    .frozen()
    .unwrap();
    config.validate(source.schedule()).unwrap();
    (source, emb)
}

fn randomize(var: &Var, rng: &mut ChaCha8Rng, scale: f64) {
    let n = var.elem_count();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap())
        .unwrap();
}

/// Norm-based relative error between autograd and central differences.
fn relative_error(vars: &[Var], loss: impl Fn() -> Tensor) -> (f64, f64) {
    let grads = loss().backward().unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for v in vars {
        let base = v
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        match grads.get(v.as_tensor()) {
            Some(g) => analytic.extend(g.flatten_all().unwrap().to_vec1::<f64>().unwrap()),
            None => analytic.extend(std::iter::repeat(0.0).take(base.len())),
        }
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + H;
            v.set(&Tensor::from_vec(p.clone(), v.shape(), &Device::Cpu).unwrap())
                .unwrap();
            let up = scalar(&loss()).unwrap();
            p[i] = base[i] - H;
            v.set(&Tensor::from_vec(p, v.shape(), &Device::Cpu).unwrap())
                .unwrap();
            let down = scalar(&loss()).unwrap();
            numeric.push((up - down) / (2.0 * H));
        }
        v.set(&Tensor::from_vec(base, v.shape(), &Device::Cpu).unwrap())
            .unwrap();
    }
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    (norm(&diff) / scale, scale)
}

#[test]
fn spn_loss_gradient_matches_finite_differences() {
    let config = StyleConfig {
        t1: 3,
        t2: 3,
        n: 1,
        stride: 1,
        ..Default::default()
    };
    let (source, emb) = setup(&config);
    let mapper = StyleMapper::initialize(&image(1), &image(2), &source, &config).unwrap();
    let problem = StyleProblem::new(&mapper, &emb, &image(1), &image(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in mapper.spn().vars() {
        randomize(&v, &mut rng, 0.5);
    }
    let (err, scale) = relative_error(&mapper.spn().vars(), || {
        problem.spn_term(mapper.spn()).unwrap()
    });
    assert!(scale > 1e-6, "gradient vanished");
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let config = StyleConfig {
        t1: 3,
        t2: 3,
        n: 1,
        stride: 1,
        lambda1: 0.7,
        lambda2: 1.3,
        lambda3: 0.2,
        ..Default::default()
    };
    let (source, emb) = setup(&config);
    let mapper = StyleMapper::initialize(&image(3), &image(4), &source, &config).unwrap();
    let problem = StyleProblem::new(&mapper, &emb, &image(3), &image(4)).unwrap();
    let x_style = image(9);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for v in mapper.spn().vars() {
        randomize(&v, &mut rng, 0.1);
    }
    let vars = mapper.trainable_vars();
    assert_eq!(vars.len(), 3);
    let (err, scale) = relative_error(&vars, || problem.evaluate(&x_style, &config).unwrap().0);
    assert!(scale > 1e-6, "gradient vanished");
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn zero_spn_start_has_finite_gradients() {
    let config = StyleConfig {
        t1: 2,
        t2: 2,
        n: 1,
        stride: 2,
        ..Default::default()
    };
    let (source, emb) = setup(&config);
    let mapper = StyleMapper::initialize(&image(5), &image(6), &source, &config).unwrap();
    let problem = StyleProblem::new(&mapper, &emb, &image(5), &image(6)).unwrap();
    let grads = problem
        .evaluate(&image(7), &config)
        .unwrap()
        .0
        .backward()
        .unwrap();
    let mut total = 0.0;
    for v in mapper.trainable_vars() {
        let g = grads
            .get(v.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
        total += g.iter().map(|x| x * x).sum::<f64>();
    }
    assert!(total > 0.0);
}
