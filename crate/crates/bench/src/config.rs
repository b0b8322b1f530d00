//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Dataset keys take a
//! `source.` or `target.` prefix. Unknown keys are errors.
//!
//! | key | meaning |
//! |---|---|
//! | `label` | variant label, e.g. `baseline`, `1sum@attn3`, `AF3-cat-32-attn3-1sum` |
//! | `stage_widths` | four comma-separated channel counts |
//! | `image_hw` | `height,width` of images and model input |
//! | `embed_dim` | bottleneck width |
//! | `af_dim` | skip width for labels that do not carry one |
//! | `epochs`, `schedule_scale`, `freeze_epochs` | training length and schedule compression |
//! | `lr_scale` | multiplier on every scheduled learning rate |
//! | `p`, `k`, `margin`, `pad` | sampler, triplet margin, crop padding |
//! | `softmax_weight`, `triplet_weight`, `base_head_loss` | objective |
//! | `protocol`, `normalize` | `cross_camera` or `plain`; L2 normalisation |
//! | `batched_eval` | extract each test set in one pass; only batch attention (`1b`) is affected, and its runs also record the other mode |
//! | `data_dir`, `output_dir` | dataset location (generated when missing) and run output |
//! | `{source,target}.num_identities`, `.test_identities`, `.identity_offset`, `.images_per_identity`, `.cameras`, `.pool_seed`, `.seed` | dataset layout |
//! | `{source,target}.clutter`, `.noise`, `.contrast`, `.color_jitter`, `.distortion`, `.color_shift`, `.background` | domain style; colours are `r,g,b`, palettes `r,g,b;r,g,b` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adfl_core::eval::{EvalConfig, Protocol};
use adfl_core::label::VariantLabel;
use adfl_core::model::ModelConfig;
use adfl_core::train::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};
use crate::synth::SyntheticDatasetSpec;

/// Parses `key = value` lines into an ordered map.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| BenchError::Config(format!("line {}: expected key = value", n + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(BenchError::Config(format!("line {}: duplicate key {}", n + 1, k.trim())));
        }
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| BenchError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| value(key, p.trim())).collect()
}

fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match list::<usize>(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(BenchError::Config(format!("{key}: expected two numbers"))),
    }
}

fn rgb(key: &str, v: &str) -> Result<[f64; 3]> {
    match list::<f64>(key, v)?[..] {
        [r, g, b] => Ok([r, g, b]),
        _ => Err(BenchError::Config(format!("{key}: expected r,g,b"))),
    }
}

fn fmt_rgb(c: &[f64; 3]) -> String {
    format!("{},{},{}", c[0], c[1], c[2])
}

/// Everything needed to reproduce one run apart from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub label: VariantLabel,
    /// `num_identities` is filled in from the training data at run time.
    pub model: ModelConfig,
    pub recipe: TrainConfig,
    pub eval: EvalConfig,
    pub source: SyntheticDatasetSpec,
    pub target: SyntheticDatasetSpec,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Desk-scale schedule compression: 150 epochs become 30.
pub const DESK_SCALE: f64 = 0.2;

/// Desk-scale learning-rate multiplier. Small randomly initialised networks
/// on the synthetic benchmark barely move at the full-scale base rate.
pub const DESK_LR_SCALE: f64 = 10.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: VariantLabel::Baseline,
            model: ModelConfig::default(),
            recipe: TrainConfig { lr_scale: DESK_LR_SCALE, ..TrainConfig::scaled(DESK_SCALE) },
            eval: EvalConfig::default(),
            source: SyntheticDatasetSpec::source(),
            target: SyntheticDatasetSpec::target(),
            data_dir: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Model configuration for this label, with the classifier sized for `classes` identities.
    pub fn model_for(&self, classes: usize) -> ModelConfig {
        let mut m = self.model.with_label(&self.label);
        m.num_identities = classes;
        m
    }

    pub fn with_label(&self, label: VariantLabel) -> Self {
        Self { label, ..self.clone() }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut epochs_given = false;
        for (k, v) in parse_pairs(text)? {
            let v = v.as_str();
            if let Some((domain, field)) = k.split_once('.') {
                let spec = match domain {
                    "source" => &mut cfg.source,
                    "target" => &mut cfg.target,
                    _ => return Err(BenchError::Config(format!("unknown key {k}"))),
                };
                set_dataset_key(spec, &k, field, v)?;
                continue;
            }
            match k.as_str() {
                "label" => cfg.label = v.parse()?,
                "stage_widths" => {
                    cfg.model.stage_widths = list::<usize>(&k, v)?
                        .try_into()
                        .map_err(|_| BenchError::Config("stage_widths: expected four numbers".into()))?
                }
                "image_hw" => {
                    let hw = pair(&k, v)?;
                    cfg.model.input_hw = hw;
                    cfg.source.image_hw = hw;
                    cfg.target.image_hw = hw;
                }
                "embed_dim" => cfg.model.embed_dim = value(&k, v)?,
                "af_dim" => cfg.model.af_dim = value(&k, v)?,
                "epochs" => {
                    cfg.recipe.epochs = value(&k, v)?;
                    epochs_given = true;
                }
                "schedule_scale" => cfg.recipe.schedule_scale = value(&k, v)?,
                "lr_scale" => cfg.recipe.lr_scale = value(&k, v)?,
                "freeze_epochs" => cfg.recipe.freeze_epochs = value(&k, v)?,
                "p" => cfg.recipe.sampler.p = value(&k, v)?,
                "k" => cfg.recipe.sampler.k = value(&k, v)?,
                "margin" => cfg.recipe.margin = value(&k, v)?,
                "pad" => cfg.recipe.pad = value(&k, v)?,
                "softmax_weight" => cfg.recipe.softmax_weight = value(&k, v)?,
                "triplet_weight" => cfg.recipe.triplet_weight = value(&k, v)?,
                "base_head_loss" => cfg.recipe.base_head_loss = value(&k, v)?,
                "protocol" => {
                    cfg.eval.protocol = match v {
                        "cross_camera" => Protocol::CrossCamera,
                        "plain" => Protocol::Plain,
                        _ => return Err(BenchError::Config(format!("protocol: unknown {v:?}"))),
                    }
                }
                "normalize" => cfg.eval.normalize = value(&k, v)?,
                "batched_eval" => cfg.eval.batched = value(&k, v)?,
                "data_dir" => cfg.data_dir = Some(PathBuf::from(v)),
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                _ => return Err(BenchError::Config(format!("unknown key {k}"))),
            }
        }
        if !epochs_given {
            cfg.recipe.epochs = (150.0 * cfg.recipe.schedule_scale).round() as usize;
        }
        cfg.source.validate().map_err(|e| BenchError::Config(format!("source: {e}")))?;
        cfg.target.validate().map_err(|e| BenchError::Config(format!("target: {e}")))?;
        cfg.model_for(1).validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let r = &self.recipe;
        let w = m.stage_widths;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("label", self.label.to_string());
        kv("stage_widths", format!("{},{},{},{}", w[0], w[1], w[2], w[3]));
        kv("image_hw", format!("{},{}", m.input_hw.0, m.input_hw.1));
        kv("embed_dim", m.embed_dim.to_string());
        kv("af_dim", m.af_dim.to_string());
        kv("epochs", r.epochs.to_string());
        kv("schedule_scale", r.schedule_scale.to_string());
        kv("lr_scale", r.lr_scale.to_string());
        kv("freeze_epochs", r.freeze_epochs.to_string());
        kv("p", r.sampler.p.to_string());
        kv("k", r.sampler.k.to_string());
        kv("margin", r.margin.to_string());
        kv("pad", r.pad.to_string());
        kv("softmax_weight", r.softmax_weight.to_string());
        kv("triplet_weight", r.triplet_weight.to_string());
        kv("base_head_loss", r.base_head_loss.to_string());
        let protocol = match self.eval.protocol {
            Protocol::CrossCamera => "cross_camera",
            Protocol::Plain => "plain",
        };
        kv("protocol", protocol.into());
        kv("normalize", self.eval.normalize.to_string());
        kv("batched_eval", self.eval.batched.to_string());
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        kv("output_dir", self.output_dir.display().to_string());
        for (name, spec) in [("source", &self.source), ("target", &self.target)] {
            let st = &spec.style;
            kv(&format!("{name}.num_identities"), spec.num_identities.to_string());
            kv(&format!("{name}.test_identities"), spec.test_identities.to_string());
            kv(&format!("{name}.identity_offset"), spec.identity_offset.to_string());
            kv(&format!("{name}.images_per_identity"), spec.images_per_identity.to_string());
            kv(&format!("{name}.cameras"), spec.cameras_per_domain.to_string());
            kv(&format!("{name}.pool_seed"), spec.pool_seed.to_string());
            kv(&format!("{name}.seed"), spec.seed.to_string());
            kv(&format!("{name}.clutter"), st.clutter.to_string());
            kv(&format!("{name}.noise"), st.noise.to_string());
            kv(&format!("{name}.contrast"), st.contrast.to_string());
            kv(&format!("{name}.color_jitter"), st.color_jitter.to_string());
            kv(&format!("{name}.distortion"), st.distortion.to_string());
            kv(&format!("{name}.color_shift"), fmt_rgb(&st.color_shift));
            kv(&format!("{name}.background"), st.background.iter().map(fmt_rgb).collect::<Vec<_>>().join(";"));
        }
        s
    }

    /// Hex SHA-256 of everything except the output directory, so a run's hash
    /// does not change when results are written elsewhere.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: PathBuf::new(), ..self.clone() }.to_text();
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn set_dataset_key(spec: &mut SyntheticDatasetSpec, key: &str, field: &str, v: &str) -> Result<()> {
    match field {
        "num_identities" => spec.num_identities = value(key, v)?,
        "test_identities" => spec.test_identities = value(key, v)?,
        "identity_offset" => spec.identity_offset = value(key, v)?,
        "images_per_identity" => spec.images_per_identity = value(key, v)?,
        "cameras" => spec.cameras_per_domain = value(key, v)?,
        "pool_seed" => spec.pool_seed = value(key, v)?,
        "seed" => spec.seed = value(key, v)?,
        "clutter" => spec.style.clutter = value(key, v)?,
        "noise" => spec.style.noise = value(key, v)?,
        "contrast" => spec.style.contrast = value(key, v)?,
        "color_jitter" => spec.style.color_jitter = value(key, v)?,
        "distortion" => spec.style.distortion = value(key, v)?,
        "color_shift" => spec.style.color_shift = rgb(key, v)?,
        "background" => spec.style.background = v.split(';').map(|c| rgb(key, c.trim())).collect::<Result<_>>()?,
        _ => return Err(BenchError::Config(format!("unknown key {key}"))),
    }
    Ok(())
}

/// Dataset-generation settings: both domain specs and where to write them.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpecFile {
    pub out_dir: PathBuf,
    pub source: SyntheticDatasetSpec,
    pub target: SyntheticDatasetSpec,
}

impl DataSpecFile {
    /// Accepts `out_dir`, `image_hw` and every `source.*` / `target.*` key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self {
            out_dir: PathBuf::from("data"),
            source: SyntheticDatasetSpec::source(),
            target: SyntheticDatasetSpec::target(),
        };
        for (k, v) in parse_pairs(text)? {
            match k.split_once('.') {
                Some(("source", f)) => set_dataset_key(&mut out.source, &k, f, &v)?,
                Some(("target", f)) => set_dataset_key(&mut out.target, &k, f, &v)?,
                _ if k == "out_dir" => out.out_dir = PathBuf::from(v),
                _ if k == "image_hw" => {
                    let hw = pair(&k, &v)?;
                    out.source.image_hw = hw;
                    out.target.image_hw = hw;
                }
                _ => return Err(BenchError::Config(format!("unknown key {k}"))),
            }
        }
        out.source.validate().map_err(|e| BenchError::Config(format!("source: {e}")))?;
        out.target.validate().map_err(|e| BenchError::Config(format!("target: {e}")))?;
        Ok(out)
    }
}
