use dreal_tensor::{Float, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Images `[N, C, H, W]` with one class label each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Float")]
pub struct LabeledImages<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// One mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Float> LabeledImages<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 || images.dim(0) != labels.len() {
            return Err(Error::Config(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<T> {
        Batch {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Consecutive batches in storage order.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = Batch<T>> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect::<Vec<_>>().into_iter()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                counts[l] += 1;
            }
        }
        counts
    }
}

/// Shuffled index batches for one epoch. A trailing batch of a single
/// sample is dropped since batch statistics need at least two.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).filter(|c| c.len() > 1 || n == 1).map(<[usize]>::to_vec).collect()
}

/// Training-time augmentation: random crop from a zero-padded image and
/// random horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    #[serde(default = "default_padding")]
    pub crop_padding: usize,
    #[serde(default = "default_flip")]
    pub horizontal_flip: bool,
}

fn default_padding() -> usize {
    2
}

fn default_flip() -> bool {
    true
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { crop_padding: default_padding(), horizontal_flip: default_flip() }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self { crop_padding: 0, horizontal_flip: false }
    }

    pub fn is_identity(&self) -> bool {
        self.crop_padding == 0 && !self.horizontal_flip
    }

    pub fn apply<T: Float>(&self, images: &Tensor<T>, rng: &mut impl Rng) -> Tensor<T> {
        if self.is_identity() {
            return images.clone();
        }
        let s = images.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let p = self.crop_padding as isize;
        let mut out = Tensor::zeros(s.to_vec());
        let (src, dst) = (images.data(), out.data_mut());
        for i in 0..n {
            let dy = rng.gen_range(-p..=p);
            let dx = rng.gen_range(-p..=p);
            let flip = self.horizontal_flip && rng.gen_bool(0.5);
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let xx = if flip { w - 1 - x } else { x };
                        let sx = xx as isize + dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                    }
                }
            }
        }
        out
    }
}
