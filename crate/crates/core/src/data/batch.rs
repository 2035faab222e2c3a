use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    /// Index batches for one epoch. The permutation depends only on
    /// `(shuffle_seed, epoch)`.
    pub fn epoch_order(&self, len: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size.max(1))
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// A gathered batch; labels ride along so consumers can audit them.
#[derive(Clone, Debug)]
pub struct ImageBatch {
    pub indices: Vec<usize>,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn iterate_batches<'a>(
    dataset: &'a ImageDataset,
    plan: &BatchPlan,
    epoch: usize,
) -> Result<impl Iterator<Item = ImageBatch> + 'a> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot batch an empty dataset".into()));
    }
    if plan.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be positive".into()));
    }
    Ok(plan
        .epoch_order(dataset.len(), epoch)
        .into_iter()
        .map(move |indices| ImageBatch {
            pixels: dataset.gather(&indices),
            labels: indices.iter().map(|&i| dataset.label(i)).collect(),
            indices,
        }))
}
