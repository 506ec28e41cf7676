//! Train/validation splits: a seeded synthetic generator or CIFAR-10 binaries.

use std::fs;
use std::path::PathBuf;

use dreal_core::backbone::NetworkConfig;
use dreal_core::data::{Augmentation, LabeledImages};
use dreal_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    #[default]
    Synthetic,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub name: DatasetName,
    /// Directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    /// Applied to training batches only.
    #[serde(default)]
    pub augmentation: Augmentation,
    /// Per-channel standardization with training-split statistics.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub val_limit: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: DatasetName::default(),
            root: None,
            synthetic: SyntheticConfig::default(),
            augmentation: Augmentation::default(),
            normalize: true,
            train_limit: None,
            val_limit: None,
        }
    }
}

/// Each class owns a few coloured Gaussian blobs at fixed places; a sample
/// jitters them, adds unrelated blobs and pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_train")]
    pub train_samples: usize,
    #[serde(default = "default_val")]
    pub val_samples: usize,
    #[serde(default = "default_blobs")]
    pub blobs_per_class: usize,
    /// Extra blobs with random place and colour in every sample.
    #[serde(default = "default_distractors")]
    pub distractors: usize,
    /// Standard deviation of blob centres, in pixels.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Relative standard deviation of blob colours.
    #[serde(default = "default_colour_jitter")]
    pub colour_jitter: f64,
    /// Standard deviation of additive pixel noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train() -> usize {
    1000
}
fn default_val() -> usize {
    500
}
fn default_blobs() -> usize {
    3
}
fn default_distractors() -> usize {
    2
}
fn default_jitter() -> f64 {
    1.5
}
fn default_colour_jitter() -> f64 {
    0.3
}
fn default_noise() -> f64 {
    0.5
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_samples: default_train(),
            val_samples: default_val(),
            blobs_per_class: default_blobs(),
            distractors: default_distractors(),
            jitter: default_jitter(),
            colour_jitter: default_colour_jitter(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self, network: &NetworkConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.name {
            DatasetName::Synthetic => {
                let s = &self.synthetic;
                if s.train_samples == 0 {
                    return bad("dataset.synthetic.train_samples must be at least 1".into());
                }
                if s.blobs_per_class == 0 {
                    return bad("dataset.synthetic.blobs_per_class must be at least 1".into());
                }
                for (name, v) in [("jitter", s.jitter), ("colour_jitter", s.colour_jitter), ("noise", s.noise)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return bad(format!("dataset.synthetic.{name} must be finite and >= 0, got {v}"));
                    }
                }
            }
            DatasetName::Cifar10 => {
                if self.root.is_none() {
                    return bad("dataset.root is required for cifar10".into());
                }
                if network.input_shape != [32, 32, 3] || network.num_classes != 10 {
                    return bad(format!(
                        "cifar10 needs network.input_shape = [32, 32, 3] and network.num_classes = 10, got {:?} and {}",
                        network.input_shape, network.num_classes
                    ));
                }
            }
        }
        if self.train_limit == Some(0) {
            return bad("dataset.train_limit must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: LabeledImages<f32>,
    pub val: LabeledImages<f32>,
    pub augmentation: Augmentation,
}

pub fn ingest_dataset(cfg: &DatasetConfig, network: &NetworkConfig) -> Result<Splits> {
    cfg.validate(network)?;
    let (mut train, mut val) = match cfg.name {
        DatasetName::Synthetic => {
            let s = &cfg.synthetic;
            let [h, w, c] = network.input_shape;
            let classes = class_prototypes(s, network.num_classes, [c, h, w]);
            (
                generate(s, &classes, s.train_samples, [c, h, w], 0),
                generate(s, &classes, s.val_samples, [c, h, w], 1),
            )
        }
        DatasetName::Cifar10 => {
            let root = cfg.root.as_deref().expect("validated");
            let train_files: Vec<PathBuf> = (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect();
            (read_cifar(&train_files)?, read_cifar(&[root.join("test_batch.bin")])?)
        }
    };
    if let Some(n) = cfg.train_limit {
        train = truncate(train, n);
    }
    if let Some(n) = cfg.val_limit {
        val = truncate(val, n);
    }
    if cfg.normalize {
        let (mean, std) = channel_stats(&train.images);
        standardize(&mut train.images, &mean, &std);
        standardize(&mut val.images, &mean, &std);
    }
    Ok(Splits { train, val, augmentation: cfg.augmentation })
}

struct Blob {
    y: f64,
    x: f64,
    sigma: f64,
    colour: Vec<f64>,
}

fn random_blob(rng: &mut ChaCha8Rng, [c, h, w]: [usize; 3]) -> Blob {
    let scale = h.min(w) as f64 / 16.0;
    Blob {
        y: rng.gen_range(0.0..h as f64),
        x: rng.gen_range(0.0..w as f64),
        sigma: scale * rng.gen_range(1.0..2.5),
        colour: (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    }
}

fn class_prototypes(s: &SyntheticConfig, classes: usize, shape: [usize; 3]) -> Vec<Vec<Blob>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    (0..classes).map(|_| (0..s.blobs_per_class).map(|_| random_blob(&mut rng, shape)).collect()).collect()
}

fn paint(image: &mut [f32], blob: &Blob, [_, h, w]: [usize; 3]) {
    let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
    for (ch, &colour) in blob.colour.iter().enumerate() {
        let plane = &mut image[ch * h * w..(ch + 1) * h * w];
        for yy in 0..h {
            let dy = yy as f64 + 0.5 - blob.y;
            for xx in 0..w {
                let dx = xx as f64 + 0.5 - blob.x;
                plane[yy * w + xx] += (colour * (-(dy * dy + dx * dx) * inv).exp()) as f32;
            }
        }
    }
}

/// Labels cycle through the classes, so every class gets `n / K` or `n / K + 1` samples.
fn generate(s: &SyntheticConfig, classes: &[Vec<Blob>], n: usize, shape: [usize; 3], stream: u64) -> LabeledImages<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(stream + 1);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let per = shape.iter().product::<usize>();
    let mut data = vec![0f32; n * per];
    let mut labels = Vec::with_capacity(n);
    for (i, image) in data.chunks_mut(per).enumerate() {
        let label = i % classes.len();
        labels.push(label);
        for b in &classes[label] {
            let blob = Blob {
                y: b.y + s.jitter * unit.sample(&mut rng),
                x: b.x + s.jitter * unit.sample(&mut rng),
                sigma: b.sigma,
                colour: b.colour.iter().map(|c| c * (1.0 + s.colour_jitter * unit.sample(&mut rng))).collect(),
            };
            paint(image, &blob, shape);
        }
        for _ in 0..s.distractors {
            let blob = random_blob(&mut rng, shape);
            paint(image, &blob, shape);
        }
        for v in image.iter_mut() {
            *v += (s.noise * unit.sample(&mut rng)) as f32;
        }
    }
    let [c, h, w] = shape;
    let images = Tensor::from_vec([n, c, h, w], data).expect("sized above");
    LabeledImages::new(images, labels).expect("one label per image")
}

const CIFAR_HINT: &str = "download https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz, extract it and point dataset.root at the cifar-10-batches-bin directory";

fn read_cifar(files: &[PathBuf]) -> Result<LabeledImages<f32>> {
    const RECORD: usize = 1 + 3 * 32 * 32;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = fs::read(path).map_err(|source| Error::MissingData { path: path.clone(), hint: CIFAR_HINT, source })?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::Parse {
                path: path.clone(),
                message: format!("length {} is not a multiple of the {RECORD}-byte record", bytes.len()),
            });
        }
        for rec in bytes.chunks(RECORD) {
            if rec[0] >= 10 {
                return Err(Error::Parse { path: path.clone(), message: format!("label {} out of range", rec[0]) });
            }
            labels.push(rec[0] as usize);
            data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let images = Tensor::from_vec([labels.len(), 3, 32, 32], data).expect("whole records");
    Ok(LabeledImages::new(images, labels)?)
}

fn truncate(data: LabeledImages<f32>, n: usize) -> LabeledImages<f32> {
    if n >= data.len() {
        return data;
    }
    let indices: Vec<usize> = (0..n).collect();
    let b = data.batch(&indices);
    LabeledImages::new(b.images, b.labels).expect("consistent batch")
}

/// Per-channel mean and standard deviation of `[N, C, H, W]` images.
pub fn channel_stats(images: &Tensor<f32>) -> (Vec<f32>, Vec<f32>) {
    let (n, c) = (images.dim(0), images.dim(1));
    let plane = images.dim(2) * images.dim(3);
    let mut mean = vec![0f64; c];
    let mut sq = vec![0f64; c];
    for (i, chunk) in images.data().chunks(plane).enumerate() {
        let ch = i % c;
        for &v in chunk {
            mean[ch] += v as f64;
            sq[ch] += v as f64 * v as f64;
        }
    }
    let count = (n * plane).max(1) as f64;
    let mut std = vec![0f32; c];
    let mut out = vec![0f32; c];
    for ch in 0..c {
        let m = mean[ch] / count;
        let var = (sq[ch] / count - m * m).max(0.0);
        out[ch] = m as f32;
        std[ch] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
    }
    (out, std)
}

pub fn standardize(images: &mut Tensor<f32>, mean: &[f32], std: &[f32]) {
    let c = images.dim(1);
    let plane = images.dim(2) * images.dim(3);
    for (i, chunk) in images.data_mut().chunks_mut(plane).enumerate() {
        let ch = i % c;
        for v in chunk {
            *v = (*v - mean[ch]) / std[ch];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_standardized_images_are_unit() {
        let net = NetworkConfig::default();
        let splits = ingest_dataset(&DatasetConfig::default(), &net).unwrap();
        let (mean, std) = channel_stats(&splits.train.images);
        for (m, s) in mean.iter().zip(&std) {
            assert!(m.abs() < 1e-4, "{m}");
            assert!((s - 1.0).abs() < 1e-4, "{s}");
        }
    }

    #[test]
    fn constant_channel_keeps_unit_scale() {
        let mut x = Tensor::full([2, 1, 2, 2], 3.0f32);
        let (m, s) = channel_stats(&x);
        assert_eq!((m[0], s[0]), (3.0, 1.0));
        standardize(&mut x, &m, &s);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }
}
