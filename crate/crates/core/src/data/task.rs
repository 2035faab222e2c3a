use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImageDataset, Split, NUM_CLASSES};
use crate::error::{Error, Result};

/// One leave-one-class-out experiment.
#[derive(Clone, Debug)]
pub struct OodTask {
    pub ood_class: u8,
    /// Ascending; position in this list is the class index used by the losses.
    pub in_dist_classes: Vec<u8>,
    /// Every training image whose label is not `ood_class`. Labels are kept
    /// only so training can audit what it consumes.
    pub pretrain_pool: ImageDataset,
    pub support_set: ImageDataset,
    /// Row of each support example in the training split.
    pub support_indices: Vec<usize>,
    pub test_set: Arc<ImageDataset>,
    pub n_support: usize,
    pub seed: u64,
}

impl OodTask {
    pub fn num_classes(&self) -> usize {
        self.in_dist_classes.len()
    }

    pub fn class_index(&self, label: u8) -> Option<usize> {
        self.in_dist_classes.iter().position(|&c| c == label)
    }

    /// Support labels remapped onto `0..K`.
    pub fn support_targets(&self) -> Result<Vec<usize>> {
        self.support_set
            .labels()
            .iter()
            .map(|&l| {
                self.class_index(l).ok_or_else(|| {
                    Error::InvalidInput(format!("support label {l} is not an in-distribution class"))
                })
            })
            .collect()
    }

    /// `true` where the test sample belongs to the held-out class.
    pub fn test_ood_mask(&self) -> Vec<bool> {
        self.test_set.labels().iter().map(|&l| l == self.ood_class).collect()
    }
}

/// Builds the task that holds out `ood_class`.
///
/// The support set is drawn from the training split only: `n_support`
/// examples per in-distribution class, without replacement, from a stream
/// seeded by `seed`.
pub fn build_task(
    train: &ImageDataset,
    test: Arc<ImageDataset>,
    ood_class: u8,
    n_support: usize,
    seed: u64,
) -> Result<OodTask> {
    if usize::from(ood_class) >= NUM_CLASSES {
        return Err(Error::InvalidInput(format!(
            "ood class {ood_class} outside the label set 0..{NUM_CLASSES}"
        )));
    }
    if train.split() != Split::Train || test.split() != Split::Test {
        return Err(Error::InvalidInput("expected (train, test) splits".into()));
    }
    if train.count_label(ood_class) == 0 || test.count_label(ood_class) == 0 {
        return Err(Error::InvalidInput(format!(
            "ood class {ood_class} must be present in both splits"
        )));
    }
    if n_support == 0 {
        return Err(Error::InvalidInput("n_support must be positive".into()));
    }

    let in_dist_classes: Vec<u8> = train
        .classes()
        .into_iter()
        .filter(|&c| c != ood_class)
        .collect();
    let pool_rows: Vec<usize> = (0..train.len())
        .filter(|&i| train.label(i) != ood_class)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support_indices = Vec::with_capacity(n_support * in_dist_classes.len());
    for &class in &in_dist_classes {
        let rows: Vec<usize> = (0..train.len()).filter(|&i| train.label(i) == class).collect();
        if rows.len() < n_support {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} training examples, {n_support} requested",
                rows.len()
            )));
        }
        support_indices.extend(index::sample(&mut rng, rows.len(), n_support).into_iter().map(|j| rows[j]));
    }

    Ok(OodTask {
        ood_class,
        in_dist_classes,
        pretrain_pool: train.select(&pool_rows),
        support_set: train.select(&support_indices),
        support_indices,
        test_set: test,
        n_support,
        seed,
    })
}
