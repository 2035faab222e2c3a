use rand::Rng;

use super::layers::{self, BatchNorm, ConvTranspose2d, Linear, Mode, NormTape, Param, Parameterized};
use super::tensor::FeatureMap;
use crate::data::MNIST_SIDE;
use crate::error::{Error, Result};

pub const NOISE_DIM: usize = 100;
const SEED_CHANNELS: usize = 512;
const SEED_SIDE: usize = 7;
const SEED_FEATURES: usize = SEED_CHANNELS * SEED_SIDE * SEED_SIDE;

/// Noise `100 -> 7*7*512 -> 7x7x512 -> 14x14x256 -> 14x14x128 -> 14x14x64 -> 28x28x1`.
#[derive(Clone, Debug)]
pub struct Generator {
    fc: Linear,
    bn0: BatchNorm,
    up1: ConvTranspose2d,
    bn1: BatchNorm,
    up2: ConvTranspose2d,
    bn2: BatchNorm,
    up3: ConvTranspose2d,
    bn3: BatchNorm,
    up4: ConvTranspose2d,
}

/// Intermediates kept for [`Generator::backward`].
pub struct GeneratorTape {
    noise: Vec<f32>,
    batch: usize,
    bn0: NormTape,
    /// Post-rectifier seed features, feature-major `[7*7*512][N]`.
    seed: Vec<f32>,
    x1: FeatureMap,
    bn1: NormTape,
    x2: FeatureMap,
    bn2: NormTape,
    x3: FeatureMap,
    bn3: NormTape,
    x4: FeatureMap,
    out: FeatureMap,
}

impl Generator {
    pub fn new(rng: &mut impl Rng) -> Self {
        Self {
            fc: Linear::new("fc", NOISE_DIM, SEED_FEATURES, rng),
            bn0: BatchNorm::new("bn0", SEED_FEATURES, rng),
            up1: ConvTranspose2d::new("up1", 512, 256, 3, 2, 1, 1, rng),
            bn1: BatchNorm::new("bn1", 256, rng),
            up2: ConvTranspose2d::new("up2", 256, 128, 3, 1, 1, 0, rng),
            bn2: BatchNorm::new("bn2", 128, rng),
            up3: ConvTranspose2d::new("up3", 128, 64, 3, 1, 1, 0, rng),
            bn3: BatchNorm::new("bn3", 64, rng),
            up4: ConvTranspose2d::new("up4", 64, 1, 3, 2, 1, 1, rng),
        }
    }

    /// `noise` holds `batch` rows of [`NOISE_DIM`] values.
    pub fn forward(&self, noise: &[f32], batch: usize, mode: Mode) -> Result<(FeatureMap, GeneratorTape)> {
        if batch == 0 || noise.len() != batch * NOISE_DIM {
            return Err(Error::Shape(format!(
                "expected {batch} noise rows of {NOISE_DIM} values, got {} values",
                noise.len()
            )));
        }
        let h = self.fc.forward(noise, batch);
        let (mut seed, bn0) = self.bn0.forward(&transpose(&h, batch, SEED_FEATURES), mode);
        layers::relu(&mut seed);
        let x1 = seed_to_map(&seed, batch);

        let (x2, bn1) = self.block(&self.up1, &self.bn1, &x1, mode);
        let (x3, bn2) = self.block(&self.up2, &self.bn2, &x2, mode);
        let (x4, bn3) = self.block(&self.up3, &self.bn3, &x3, mode);
        let mut out = self.up4.forward(&x4);
        layers::tanh(&mut out.data);

        let tape = GeneratorTape {
            noise: noise.to_vec(),
            batch,
            bn0,
            seed,
            x1,
            bn1,
            x2,
            bn2,
            x3,
            bn3,
            x4,
            out: out.clone(),
        };
        Ok((out, tape))
    }

    fn block(&self, up: &ConvTranspose2d, bn: &BatchNorm, x: &FeatureMap, mode: Mode) -> (FeatureMap, NormTape) {
        let u = up.forward(x);
        let (mut y, tape) = bn.forward(&u.data, mode);
        layers::leaky_relu(&mut y);
        (FeatureMap { data: y, ..u }, tape)
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// statistics.
    pub fn commit(&mut self, tape: &GeneratorTape) {
        self.bn0.commit(&tape.bn0);
        self.bn1.commit(&tape.bn1);
        self.bn2.commit(&tape.bn2);
        self.bn3.commit(&tape.bn3);
    }

    /// Accumulates parameter gradients for `d loss / d images`.
    pub fn backward(&mut self, tape: &GeneratorTape, d_images: &FeatureMap) {
        let mut d = d_images.data.clone();
        layers::tanh_backward(&tape.out.data, &mut d);
        let d4 = self
            .up4
            .backward(&tape.x4, &FeatureMap { data: d, ..tape.out.clone() }, true)
            .expect("dx requested");
        let d3 = Self::block_backward(&mut self.up3, &mut self.bn3, &tape.x3, &tape.bn3, &tape.x4, d4);
        let d2 = Self::block_backward(&mut self.up2, &mut self.bn2, &tape.x2, &tape.bn2, &tape.x3, d3);
        let d1 = Self::block_backward(&mut self.up1, &mut self.bn1, &tape.x1, &tape.bn1, &tape.x2, d2);

        let mut ds = map_to_seed(&d1);
        layers::relu_backward(&tape.seed, &mut ds);
        let dh = self.bn0.backward(&tape.bn0, &ds);
        self.fc
            .backward(&tape.noise, tape.batch, &transpose(&dh, SEED_FEATURES, tape.batch), false);
    }

    fn block_backward(
        up: &mut ConvTranspose2d,
        bn: &mut BatchNorm,
        input: &FeatureMap,
        norm: &NormTape,
        output: &FeatureMap,
        mut d_out: FeatureMap,
    ) -> FeatureMap {
        layers::leaky_relu_backward(&output.data, &mut d_out.data);
        let du = bn.backward(norm, &d_out.data);
        up.backward(input, &FeatureMap { data: du, ..d_out }, true)
            .expect("dx requested")
    }

    /// Evaluation-mode sampling; images are `1 x N x 28 x 28`.
    pub fn generate(&self, noise: &[f32], batch: usize) -> Result<FeatureMap> {
        let (out, _) = self.forward(noise, batch, Mode::Eval)?;
        debug_assert_eq!(out.height, MNIST_SIDE);
        Ok(out)
    }
}

fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// Feature-major `[512*49][N]` (feature index `c*49 + p`) to `512 x N x 7 x 7`.
fn seed_to_map(seed: &[f32], batch: usize) -> FeatureMap {
    let hw = SEED_SIDE * SEED_SIDE;
    let mut fm = FeatureMap::zeros(SEED_CHANNELS, batch, SEED_SIDE, SEED_SIDE);
    for c in 0..SEED_CHANNELS {
        for p in 0..hw {
            let src = &seed[(c * hw + p) * batch..][..batch];
            for (n, &v) in src.iter().enumerate() {
                fm.data[(c * batch + n) * hw + p] = v;
            }
        }
    }
    fm
}

fn map_to_seed(fm: &FeatureMap) -> Vec<f32> {
    let (hw, batch) = (fm.spatial(), fm.batch);
    let mut seed = vec![0.0; fm.data.len()];
    for c in 0..fm.channels {
        for p in 0..hw {
            for n in 0..batch {
                seed[(c * hw + p) * batch + n] = fm.data[(c * batch + n) * hw + p];
            }
        }
    }
    seed
}

impl Parameterized for Generator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc.params();
        v.extend(self.bn0.params());
        for (up, bn) in [(&self.up1, &self.bn1), (&self.up2, &self.bn2), (&self.up3, &self.bn3)] {
            v.extend(up.params());
            v.extend(bn.params());
        }
        v.extend(self.up4.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc.params_mut();
        v.extend(self.bn0.params_mut());
        v.extend(self.up1.params_mut());
        v.extend(self.bn1.params_mut());
        v.extend(self.up2.params_mut());
        v.extend(self.bn2.params_mut());
        v.extend(self.up3.params_mut());
        v.extend(self.bn3.params_mut());
        v.extend(self.up4.params_mut());
        v
    }
}
