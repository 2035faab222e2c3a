use rand::Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, FEATURE_DIM};
use super::layers::{Linear, Mode, Param, Parameterized};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HeadMode {
    /// Raw conv-stack features, `d = 3136`.
    Flatten,
    /// Trainable affine map `3136 -> dim`.
    Projected { dim: usize },
}

impl Default for HeadMode {
    fn default() -> Self {
        HeadMode::Projected { dim: 128 }
    }
}

/// Maps discriminator features into the embedding space.
#[derive(Clone, Debug)]
pub struct EmbeddingHead {
    mode: HeadMode,
    proj: Option<Linear>,
}

impl EmbeddingHead {
    pub fn new(mode: HeadMode, rng: &mut impl Rng) -> Result<Self> {
        let proj = match mode {
            HeadMode::Flatten => None,
            HeadMode::Projected { dim } if dim >= 2 => Some(Linear::new("proj", FEATURE_DIM, dim, rng)),
            HeadMode::Projected { dim } => {
                return Err(Error::InvalidInput(format!("embedding dimension {dim} < 2")))
            }
        };
        Ok(Self { mode, proj })
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            HeadMode::Flatten => FEATURE_DIM,
            HeadMode::Projected { dim } => dim,
        }
    }

    pub fn forward(&self, features: &[f32], batch: usize) -> Vec<f32> {
        match &self.proj {
            None => features.to_vec(),
            Some(p) => p.forward(features, batch),
        }
    }

    /// Accumulates head gradients, returns `d loss / d features`.
    pub fn backward(&mut self, features: &[f32], batch: usize, dz: &[f32]) -> Vec<f32> {
        match &mut self.proj {
            None => dz.to_vec(),
            Some(p) => p.backward(features, batch, dz, true).expect("dx requested"),
        }
    }
}

impl Parameterized for EmbeddingHead {
    fn params(&self) -> Vec<&Param> {
        self.proj.iter().flat_map(|p| p.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.proj.iter_mut().flat_map(|p| p.params_mut()).collect()
    }
}

/// Evaluation-mode embedding `f(x)` of every image, one row per image.
pub fn embed(disc: &Discriminator, head: &EmbeddingHead, images: &FeatureMap) -> Result<Matrix> {
    let tape = disc.forward_features(images, Mode::Eval)?;
    let z = head.forward(tape.features(), images.batch);
    Matrix::from_f32(images.batch, head.dim(), &z)
}

/// [`embed`] over a large image set in chunks of `chunk` images.
pub fn embed_chunked(
    disc: &Discriminator,
    head: &EmbeddingHead,
    pixels: &[f32],
    count: usize,
    chunk: usize,
) -> Result<Matrix> {
    let per = pixels.len() / count.max(1);
    let side = (per as f64).sqrt() as usize;
    let mut data = Vec::with_capacity(count * head.dim());
    for start in (0..count).step_by(chunk.max(1)) {
        let end = (start + chunk).min(count);
        let imgs = FeatureMap::from_images(&pixels[start * per..end * per], end - start, side, side, 1)?;
        data.extend(embed(disc, head, &imgs)?.into_vec());
    }
    Matrix::from_vec(count, head.dim(), data)
}
