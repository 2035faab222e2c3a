//! Image datasets, leave-one-class-out tasks and deterministic batching.

mod batch;
pub mod idx;
mod task;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{iterate_batches, BatchPlan, ImageBatch};
pub use idx::{parse_idx, write_idx};
pub use task::{build_task, OodTask};

use crate::error::{Error, Result};

pub const MNIST_SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Immutable image collection with intensities in `[-1, 1]`.
///
/// Pixels are stored image-major, each image row-major (`H x W x C`).
#[derive(Clone, Debug)]
pub struct ImageDataset {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    labels: Vec<u8>,
    split: Split,
}

impl ImageDataset {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f32>,
        labels: Vec<u8>,
        split: Split,
    ) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::Consistency(format!(
                "{} pixel values do not form {} images of {height}x{width}x{channels}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [-1, 1]"
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
            return Err(Error::InvalidInput(format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            labels,
            split,
        })
    }

    /// Loads `{prefix}-images-idx3-ubyte[.gz]` / `{prefix}-labels-idx1-ubyte[.gz]`
    /// from `dir`, where `prefix` is `train` or `t10k`.
    pub fn load_mnist_split(dir: &Path, split: Split) -> Result<Self> {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "t10k",
        };
        let find = |stem: String| {
            let plain = dir.join(&stem);
            if plain.exists() {
                plain
            } else {
                dir.join(format!("{stem}.gz"))
            }
        };
        parse_idx(
            &find(format!("{prefix}-images-idx3-ubyte")),
            &find(format!("{prefix}-labels-idx1-ubyte")),
            split,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.pixels_per_image();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; NUM_CLASSES];
        for &l in &self.labels {
            seen[usize::from(l)] = true;
        }
        (0..NUM_CLASSES as u8).filter(|&c| seen[usize::from(c)]).collect()
    }

    pub fn count_label(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> ImageDataset {
        let per = self.pixels_per_image();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        ImageDataset {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels,
            labels,
            split: self.split,
        }
    }

    /// Copies the given rows into one contiguous `N x H x W x C` buffer.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let per = self.pixels_per_image();
        let mut out = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            out.extend_from_slice(self.image(i));
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Small synthetic dataset: `per_class[c]` images of class `c`, each a
    /// constant image whose intensity encodes its row index.
    pub fn synthetic(per_class: &[usize], split: Split) -> ImageDataset {
        let mut labels = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            labels.extend(std::iter::repeat(c as u8).take(n));
        }
        let total = labels.len();
        let mut pixels = Vec::with_capacity(total * 4);
        for i in 0..total {
            let v = (i % 200) as f32 / 100.0 - 1.0;
            pixels.extend_from_slice(&[v; 4]);
        }
        ImageDataset::new(2, 2, 1, pixels, labels, split).unwrap()
    }

    /// 28x28 images where class `c` lights the row band `3c..3c+3`, with a
    /// column pattern that varies per example.
    pub fn digits(per_class: usize, split: Split) -> ImageDataset {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for c in 0..NUM_CLASSES {
            for i in 0..per_class {
                for r in 0..MNIST_SIDE {
                    for col in 0..MNIST_SIDE {
                        let on = r / 3 == c && (col + i) % 5 != 0;
                        pixels.push(if on { 0.9 } else { -0.9 });
                    }
                }
                labels.push(c as u8);
            }
        }
        ImageDataset::new(MNIST_SIDE, MNIST_SIDE, 1, pixels, labels, split).unwrap()
    }
}
