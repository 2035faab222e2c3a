//! Deterministic inputs shared by the benchmarks.

use ibood::loss::gradcheck::Fixture;
use ibood::nets::FeatureMap;
use ibood::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Support-set sized loss fixture: 90 samples, 9 classes.
pub fn loss_fixture(dim: usize) -> Fixture {
    Fixture::random(90, dim, 9, 7).expect("valid fixture")
}

pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("consistent shape")
}

pub fn image_batch(batch: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels: Vec<f32> = (0..batch * 28 * 28).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::from_images(&pixels, batch, 28, 28, 1).expect("consistent shape")
}
