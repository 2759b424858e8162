use std::path::Path;

use anyhow::{bail, Context, Result};
use candle_core::DType;
use stylseg::data::{
    generate_mixed, generate_synthetic, images_to_tensor, load_dataset, read_rgb, save_images,
    write_gray, write_mask, Sample,
};
use stylseg::diffusion::{train_diffae, DiffAEModel};
use stylseg::embedding::{train_embedder, ConvEmbedder};
use stylseg::metrics::{
    evaluate_all, evaluate_dirs, mean_report, write_mean_csv, write_per_sample_csv, BinaryMask,
    MetricReport,
};
use stylseg::segmentation::{predict_mask, stylize_images, train_segmenter, UNet};
use stylseg::style::{train_style_mapper, StyleMapper};

use crate::config::{Paths, RunConfig};

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn loss_history(path: &Path, key: &str, values: &[f64]) -> Result<()> {
    write_csv(
        path,
        &[key, "loss"],
        values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]),
    )
}

fn require_masks(samples: &[Sample], dir: &Path) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.mask.is_none()) {
        bail!("{}: sample `{}` has no mask in masks/", dir.display(), s.id);
    }
    Ok(())
}

pub fn synth_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (source, target) = generate_synthetic(&cfg.synth)?;
    let ms = save_images(&source, &out.join("source"))?;
    let mt = save_images(&target, &out.join("target"))?;
    println!("source: {} samples ({})", ms.entries.len(), ms.checksum);
    println!("target: {} samples ({})", mt.entries.len(), mt.checksum);
    if cfg.data.mixed_count > 0 {
        let pool_cfg = stylseg::data::SynthConfig {
            count: cfg.data.mixed_count,
            ..cfg.synth.clone()
        };
        let mut pool = generate_mixed(&pool_cfg)?;
        for s in &mut pool {
            s.mask = None;
        }
        let mm = save_images(&pool, &out.join("mixed"))?;
        println!("mixed: {} samples ({})", mm.entries.len(), mm.checksum);
    }
    Ok(())
}

pub fn train_diffae_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dir = Paths::require(&cfg.paths.data, "data")?;
    let samples = load_dataset(dir, cfg.data.image_size, "pretrain")?;
    let images = images_to_tensor(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    let dtype = cfg.diffae.dtype.dtype();
    let mut net = cfg.diffae.net.clone();
    net.image_size = cfg.data.image_size;
    let trained = train_diffae(
        &images,
        &net,
        &cfg.diffae.schedule,
        &cfg.diffae.train,
        dtype,
    )?;
    let hash = trained.model.save(&out.join("diffae.json"))?;
    loss_history(&out.join("diffae_history.csv"), "step", &trained.history)?;
    println!("diffae: {} steps, checkpoint {hash}", trained.history.len());
    let (embedder, history) =
        train_embedder(&images, &cfg.embedder.net, &cfg.embedder.train, dtype)?;
    let hash = embedder.save(&out.join("embedder.json"))?;
    loss_history(&out.join("embedder_history.csv"), "step", &history)?;
    println!("embedder: {} steps, checkpoint {hash}", history.len());
    Ok(())
}

fn load_image(path: &Path, size: usize) -> Result<candle_core::Tensor> {
    if !path.exists() {
        bail!("image not found: {}", path.display());
    }
    Ok(images_to_tensor(&[&read_rgb(path, Some(size))?])?)
}

pub fn train_style(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (source, _) = DiffAEModel::load(Paths::require(&cfg.paths.diffae, "diffae")?)?;
    let (embedder, _) = ConvEmbedder::load(Paths::require(&cfg.paths.embedder, "embedder")?)?;
    let size = source.image_shape()[1];
    let x_a = load_image(
        Paths::require(&cfg.paths.source_image, "source_image")?,
        size,
    )?;
    let y_b = load_image(
        Paths::require(&cfg.paths.target_image, "target_image")?,
        size,
    )?;
    let mapper = train_style_mapper(&x_a, &y_b, &source, &embedder, &cfg.style)?;
    let hash = mapper.save(&out.join("style.json"))?;
    let rows = mapper.history().iter().enumerate().map(|(i, r)| {
        vec![
            (i + 1).to_string(),
            r.adv.to_string(),
            r.cycle.to_string(),
            r.spn.to_string(),
            r.total.to_string(),
        ]
    });
    write_csv(
        &out.join("style_history.csv"),
        &["iteration", "adv", "cycle", "spn", "total"],
        rows,
    )?;
    println!(
        "style mapper: {} iterations, checkpoint {hash}",
        mapper.history().len()
    );
    Ok(())
}

pub fn stylize(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (source, _) = DiffAEModel::load(Paths::require(&cfg.paths.diffae, "diffae")?)?;
    let mapper = StyleMapper::load(Paths::require(&cfg.paths.style, "style")?, &source)?;
    let input = Paths::require(&cfg.paths.input, "input")?;
    let samples = load_dataset(input, source.image_shape()[1], "stylized")?;
    let styled = stylize_images(
        &mapper,
        &samples.iter().map(|s| &s.image).collect::<Vec<_>>(),
        8,
    )?;
    let outputs: Vec<Sample> = samples
        .into_iter()
        .zip(styled)
        .map(|(s, image)| Sample { image, ..s })
        .collect();
    let manifest = save_images(&outputs, out)?;
    println!(
        "stylized {} images ({})",
        manifest.entries.len(),
        manifest.checksum
    );
    Ok(())
}

pub fn train_seg(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dir = Paths::require(&cfg.paths.data, "data")?;
    let samples = load_dataset(dir, cfg.data.image_size, "train")?;
    require_masks(&samples, dir)?;
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = samples.iter().filter_map(|s| s.mask.as_ref()).collect();
    let (model, history) = train_segmenter(&images, &masks, &cfg.seg, DType::F32)?;
    let hash = model.save(&out.join("segmenter.json"))?;
    loss_history(&out.join("seg_history.csv"), "epoch", &history)?;
    println!(
        "segmenter: {} epochs, final loss {:.4}, checkpoint {hash}",
        history.len(),
        history.last().unwrap_or(&0.0)
    );
    Ok(())
}

fn write_reports(out: &Path, rows: &[(String, MetricReport)]) -> Result<MetricReport> {
    let mean = mean_report(rows)?;
    write_per_sample_csv(&out.join("per_sample.csv"), rows)?;
    write_mean_csv(&out.join("mean.csv"), &mean)?;
    Ok(mean)
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let test = Paths::require(&cfg.paths.test, "test")?;
    let rows = if let Some(pred_dir) = &cfg.paths.predictions {
        evaluate_dirs(pred_dir, &test.join("masks"), cfg.eval.threshold)?
    } else {
        let (model, _) = UNet::load(Paths::require(&cfg.paths.segmenter, "segmenter")?)?;
        let samples = load_dataset(test, cfg.data.image_size, "test")?;
        require_masks(&samples, test)?;
        let (prob_dir, mask_dir) = (out.join("prob"), out.join("pred"));
        for d in [&prob_dir, &mask_dir] {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        let mut rows = Vec::with_capacity(samples.len());
        for s in &samples {
            let (mask, prob): (BinaryMask, _) = predict_mask(&model, &s.image, cfg.eval.threshold)?;
            write_gray(&prob_dir.join(format!("{}.png", s.id)), &prob)?;
            write_mask(&mask_dir.join(format!("{}.png", s.id)), &mask)?;
            let gt = s.mask.as_ref().expect("checked above");
            rows.push((s.id.clone(), evaluate_all(&prob, gt, cfg.eval.threshold)?));
        }
        rows
    };
    let mean = write_reports(out, &rows)?;
    println!(
        "evaluated {} samples: dice {:.4}, mae {:.4}",
        rows.len(),
        mean.dice,
        mean.mae
    );
    Ok(())
}
