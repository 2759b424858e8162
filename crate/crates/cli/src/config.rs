use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stylseg::data::SynthConfig;
use stylseg::diffusion::{DiffAETrainConfig, NetConfig, ScheduleConfig};
use stylseg::embedding::{EmbedderConfig, EmbedderTrainConfig};
use stylseg::segmentation::SegConfig;
use stylseg::style::StyleConfig;

/// Everything a run needs. Every field has a default, so an empty file is
/// a valid config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every section.
    pub seed: Option<u64>,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub diffae: DiffAESection,
    pub embedder: EmbedderSection,
    pub style: StyleConfig,
    pub seg: SegConfig,
    pub eval: EvalSection,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Images are resized to this size on load.
    pub image_size: usize,
    /// Size of the unlabelled mixed-style pool written by `synth-data`.
    pub mixed_count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            image_size: 64,
            mixed_count: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Probability threshold for binary masks (`prob > threshold`).
    pub threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffAESection {
    pub net: NetConfig,
    pub schedule: ScheduleConfig,
    pub train: DiffAETrainConfig,
    /// "f32" or "f64".
    pub dtype: Precision,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub net: EmbedderConfig,
    pub train: EmbedderTrainConfig,
}

/// Input locations. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset dir (`images/`, optional `masks/`) for training commands.
    pub data: Option<PathBuf>,
    /// Labelled test dataset dir for `evaluate`.
    pub test: Option<PathBuf>,
    /// Input dataset dir for `stylize`.
    pub input: Option<PathBuf>,
    pub diffae: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub segmenter: Option<PathBuf>,
    /// Probability-map PNGs to score in `evaluate` instead of running a segmenter.
    pub predictions: Option<PathBuf>,
    pub source_image: Option<PathBuf>,
    pub target_image: Option<PathBuf>,
}

impl Paths {
    pub fn require<'a>(field: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        match field {
            Some(p) => Ok(p.as_path()),
            None => bail!("missing required path `paths.{key}` (set it in the config or with --set paths.{key}=...)"),
        }
    }
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .with_context(|| format!("empty override key `{key}`"))?;
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses `v` as a TOML value, falling back to a plain string.
fn parse_value(v: &str) -> toml::Value {
    let doc = format!("v = {v}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(v.to_string())),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides and the global
    /// seed, and rejects unknown keys.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not key=value"))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if seed.is_some() {
            config.seed = seed;
        }
        if let Some(s) = config.seed {
            config.synth.seed = s;
            config.diffae.train.seed = s;
            config.embedder.train.seed = s;
            config.style.seed = s;
            config.seg.seed = s;
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the resolved config to `dir/config.toml`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let p = dir.join("config.toml");
        std::fs::write(&p, self.to_toml()?).with_context(|| format!("writing {}", p.display()))
    }
}
