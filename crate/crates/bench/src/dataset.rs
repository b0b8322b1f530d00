//! On-disk datasets: PNG images plus a CSV manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use adfl_core::eval::{ImageSet, TestSplit};
use adfl_core::train::TrainSet;
use adfl_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::synth::{generate, RgbImage, Split, SyntheticDatasetSpec, SyntheticSample};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub identity: usize,
    pub camera: usize,
    pub domain: String,
    pub split: String,
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| BenchError::format(path, e))?;
    writer.write_image_data(&image.pixels).map_err(|e| BenchError::format(path, e))?;
    writer.finish().map_err(|e| BenchError::format(path, e))
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let file = fs::File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| BenchError::format(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| BenchError::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| BenchError::format(path, e))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(BenchError::format(path, format!("unsupported colour type {other:?}"))),
    };
    Ok(RgbImage { height: h, width: w, pixels })
}

/// `[3, H, W]` network input with pixels mapped from `[0, 255]` to `[-2, 2]`.
pub fn to_tensor(image: &RgbImage) -> Tensor {
    let (h, w) = (image.height, image.width);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        (image.pixels[p * 3 + c] as f64 / 255.0 - 0.5) / 0.25
    })
}

/// Renders the given domains into `dir` and writes the combined manifest.
pub fn write_dataset(dir: &Path, specs: &[SyntheticDatasetSpec]) -> Result<Vec<ManifestRow>> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut rows = Vec::new();
    for spec in specs {
        for s in generate(spec).map_err(BenchError::Config)? {
            let path = s.path(&spec.domain);
            write_png(&dir.join(&path), &s.image)?;
            rows.push(ManifestRow {
                path,
                identity: s.identity,
                camera: s.camera,
                domain: spec.domain.clone(),
                split: s.split.as_str().into(),
            });
        }
    }
    let manifest = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| BenchError::format(&manifest, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| BenchError::format(&manifest, e))?;
    }
    w.flush().map_err(|e| BenchError::io(&manifest, e))?;
    Ok(rows)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let manifest = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&manifest).map_err(|e| BenchError::format(&manifest, e))?;
    r.deserialize().map(|row| row.map_err(|e| BenchError::format(&manifest, e))).collect()
}

/// One domain's images in network form.
#[derive(Clone, Debug)]
pub struct DomainData {
    pub domain: String,
    /// Training images with identities remapped to `0..n`; empty for test-only domains.
    pub train: TrainSet,
    /// Original identity of each class index.
    pub train_identities: Vec<usize>,
    pub test: Option<TestSplit>,
}

impl DomainData {
    pub fn num_train_identities(&self) -> usize {
        self.train_identities.len()
    }

    fn from_parts(domain: &str, parts: Vec<(usize, usize, Split, Tensor)>) -> Result<Self> {
        let ids: BTreeMap<usize, usize> = {
            let mut seen: Vec<usize> = parts.iter().filter(|p| p.2 == Split::Train).map(|p| p.0).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
        };
        let mut train = TrainSet::default();
        let mut query = Vec::new();
        let mut gallery = Vec::new();
        for (id, cam, split, t) in parts {
            match split {
                Split::Train => {
                    train.labels.push(ids[&id]);
                    train.images.push(t);
                }
                Split::Query => query.push((id, cam, t)),
                Split::Gallery => gallery.push((id, cam, t)),
            }
        }
        let stack = |items: &[(usize, usize, Tensor)]| -> Result<ImageSet> {
            let images = Tensor::stack(&items.iter().map(|x| &x.2).collect::<Vec<_>>())?;
            Ok(ImageSet {
                images,
                identities: items.iter().map(|x| x.0).collect(),
                cameras: items.iter().map(|x| x.1).collect(),
            })
        };
        let test = match (query.is_empty(), gallery.is_empty()) {
            (false, false) => {
                Some(TestSplit { domain: domain.into(), query: stack(&query)?, gallery: stack(&gallery)? })
            }
            (true, true) => None,
            _ => return Err(BenchError::Data(format!("domain {domain} has only one of query and gallery"))),
        };
        Ok(Self { domain: domain.into(), train, train_identities: ids.into_keys().collect(), test })
    }

    /// Builds a domain from freshly generated samples, through the same 8-bit path as disk IO.
    pub fn from_samples(domain: &str, samples: &[SyntheticSample]) -> Result<Self> {
        let parts = samples.iter().map(|s| (s.identity, s.camera, s.split, to_tensor(&s.image))).collect();
        Self::from_parts(domain, parts)
    }

    pub fn load(dir: &Path, rows: &[ManifestRow], domain: &str) -> Result<Self> {
        let mut parts = Vec::new();
        for r in rows.iter().filter(|r| r.domain == domain) {
            let split = Split::parse(&r.split)
                .ok_or_else(|| BenchError::Data(format!("{}: unknown split {}", r.path, r.split)))?;
            let path: PathBuf = dir.join(&r.path);
            parts.push((r.identity, r.camera, split, to_tensor(&read_png(&path)?)));
        }
        if parts.is_empty() {
            return Err(BenchError::Data(format!("no images for domain {domain} in {}", dir.display())));
        }
        Self::from_parts(domain, parts)
    }
}
