//! Dataset IO (PNG images and 0/255 masks), resizing, deterministic splits,
//! manifests with checksums, and the synthetic two-domain generator.

mod synth;

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use synth::{
    generate_mixed, generate_synthetic, LesionDescriptor, StyleDescriptor, SynthConfig,
};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// One image with optional mask. `image` is `[3, h, w]` with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Array3<f32>,
    pub mask: Option<BinaryMask>,
    pub domain_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    pub mask_path: Option<String>,
    pub domain_tag: String,
    pub checksum: String,
}

/// Entries in id order plus a checksum over all entry checksums.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub checksum: String,
}

impl DatasetManifest {
    fn from_entries(entries: Vec<ManifestEntry>) -> Self {
        if entries.is_empty() {
            return Self::default();
        }
        let mut h = Sha256::new();
        for e in &entries {
            h.update(e.checksum.as_bytes());
        }
        Self {
            entries,
            checksum: hex::encode(h.finalize()),
        }
    }

    /// Writes `id,image_path,mask_path,domain_tag,checksum` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "image_path", "mask_path", "domain_tag", "checksum"])?;
        for e in &self.entries {
            w.write_record([
                &e.id,
                &e.image_path,
                e.mask_path.as_deref().unwrap_or(""),
                &e.domain_tag,
                &e.checksum,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::InvalidInput(format!(
                    "{}: manifest rows need 5 fields",
                    path.display()
                )));
            }
            entries.push(ManifestEntry {
                id: rec[0].to_string(),
                image_path: rec[1].to_string(),
                mask_path: (!rec[2].is_empty()).then(|| rec[2].to_string()),
                domain_tag: rec[3].to_string(),
                checksum: rec[4].to_string(),
            });
        }
        Ok(Self::from_entries(entries))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |e| Error::Image {
        path: path.to_path_buf(),
        cause: e,
    }
}

/// `(stem, path)` of every `.png` file in `dir`, sorted by stem.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an RGB image as `[3, h, w]` in [0, 1], bilinearly resized to
/// `size x size` when given.
pub fn read_rgb(path: &Path, size: Option<usize>) -> Result<Array3<f32>> {
    let mut img = image::open(path).map_err(image_err(path))?.to_rgb8();
    if let Some(s) = size {
        if img.dimensions() != (s as u32, s as u32) {
            img = image::imageops::resize(&img, s as u32, s as u32, FilterType::Triangle);
        }
    }
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (3, h as usize, w as usize),
        |(c, y, x)| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0,
    ))
}

/// Writes `[3, h, w]` values in [0, 1] as an 8-bit RGB PNG.
pub fn write_rgb(path: &Path, image: &Array3<f32>) -> Result<()> {
    let (_, h, w) = image.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| quantize(image[[c, y as usize, x as usize]] as f64);
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(image_err(path))
}

/// Reads a grayscale image as values in [0, 1].
pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

pub fn write_gray(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(values[[y as usize, x as usize]])])
    });
    img.save(path).map_err(image_err(path))
}

fn mask_from_gray(img: &GrayImage) -> Result<BinaryMask> {
    let (w, h) = img.dimensions();
    BinaryMask::new(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] > 127
    }))
}

/// Reads a mask: gray value > 127 is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    mask_from_gray(&image::open(path).map_err(image_err(path))?.to_luma8())
}

/// Reads a mask and resizes it with nearest-neighbour to `size x size`.
pub fn read_mask_resized(path: &Path, size: usize) -> Result<BinaryMask> {
    let mut img = image::open(path).map_err(image_err(path))?.to_luma8();
    if img.dimensions() != (size as u32, size as u32) {
        img = image::imageops::resize(&img, size as u32, size as u32, FilterType::Nearest);
    }
    mask_from_gray(&img)
}

/// Writes a mask as single-channel 0/255.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.shape();
    let g = mask.grid();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if g[[y as usize, x as usize]] { 255 } else { 0 }])
    });
    img.save(path).map_err(image_err(path))
}

/// Loads `<root>/images/*.png` (resized to `size`) with masks from
/// `<root>/masks/` where present; samples sorted by id.
pub fn load_dataset(root: &Path, size: usize, domain_tag: &str) -> Result<Vec<Sample>> {
    let images = root.join("images");
    if !images.is_dir() {
        return Err(Error::InvalidInput(format!(
            "missing directory {}",
            images.display()
        )));
    }
    let files = list_pngs(&images)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .png images in {}",
            images.display()
        )));
    }
    let masks = root.join("masks");
    let mut out = Vec::with_capacity(files.len());
    for (id, path) in files {
        let image = read_rgb(&path, Some(size))?;
        let mask_path = masks.join(format!("{id}.png"));
        let mask = if mask_path.is_file() {
            Some(read_mask_resized(&mask_path, size)?)
        } else {
            None
        };
        out.push(Sample {
            id,
            image,
            mask,
            domain_tag: domain_tag.to_string(),
        });
    }
    Ok(out)
}

/// Quantized pixel content hash of a sample (image bytes, then mask bytes).
pub fn sample_checksum(sample: &Sample) -> String {
    let mut h = Sha256::new();
    h.update(
        sample
            .image
            .iter()
            .map(|&v| quantize(v as f64))
            .collect::<Vec<u8>>(),
    );
    if let Some(m) = &sample.mask {
        h.update(m.grid().iter().map(|&v| v as u8).collect::<Vec<u8>>());
    }
    hex::encode(h.finalize())
}

/// Writes `images/<id>.png`, `masks/<id>.png` and `manifest.csv` under
/// `out_dir`. An empty input writes nothing.
pub fn save_images(samples: &[Sample], out_dir: &Path) -> Result<DatasetManifest> {
    if samples.is_empty() {
        return Ok(DatasetManifest::default());
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidInput("duplicate sample ids".into()));
    }
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mask_dir = out_dir.join("masks");
    if sorted.iter().any(|s| s.mask.is_some()) {
        std::fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;
    }
    let mut entries = Vec::with_capacity(sorted.len());
    for s in sorted {
        let image_path = format!("images/{}.png", s.id);
        write_rgb(&out_dir.join(&image_path), &s.image)?;
        let mask_path = match &s.mask {
            Some(m) => {
                let p = format!("masks/{}.png", s.id);
                write_mask(&out_dir.join(&p), m)?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image_path,
            mask_path,
            domain_tag: s.domain_tag.clone(),
            checksum: sample_checksum(s),
        });
    }
    let manifest = DatasetManifest::from_entries(entries);
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Deterministic disjoint partition of `items` into parts sized by
/// `fractions` (largest-remainder rounding).
pub fn split<T: Clone>(items: &[T], fractions: &[f64], seed: u64) -> Result<Vec<Vec<T>>> {
    if items.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty list".into()));
    }
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::InvalidInput(
            "split fractions must be positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    let n = items.len();
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(
            idx[start..start + s]
                .iter()
                .map(|&i| items[i].clone())
                .collect(),
        );
        start += s;
    }
    Ok(parts)
}

/// Stacks images into an `[n, 3, h, w]` f32 tensor.
pub fn images_to_tensor(images: &[&Array3<f32>]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("no images".into()))?;
    let dim = first.dim();
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in images {
        if img.dim() != dim {
            return Err(Error::ShapeMismatch {
                expected: vec![dim.0, dim.1, dim.2],
                got: vec![img.dim().0, img.dim().1, img.dim().2],
            });
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_vec(
        data,
        (images.len(), dim.0, dim.1, dim.2),
        &Device::Cpu,
    )?)
}

/// Splits an `[n, 3, h, w]` tensor back into images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Array3<f32>>> {
    let (n, c, h, w) = t.dims4()?;
    let flat = t
        .to_dtype(candle_core::DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    Ok((0..n)
        .map(|i| {
            Array3::from_shape_vec((c, h, w), flat[i * c * h * w..(i + 1) * c * h * w].to_vec())
                .expect("sized")
        })
        .collect())
}

/// Stacks masks into an `[n, 1, h, w]` f32 tensor of 0/1.
pub fn masks_to_tensor(masks: &[&BinaryMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidInput("no masks".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.shape() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w],
                got: vec![m.shape().0, m.shape().1],
            });
        }
        data.extend(m.grid().iter().map(|&v| if v { 1.0f32 } else { 0.0 }));
    }
    Ok(Tensor::from_vec(
        data,
        (masks.len(), 1, h, w),
        &Device::Cpu,
    )?)
}
