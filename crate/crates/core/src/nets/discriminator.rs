use rand::Rng;

use super::layers::{self, BatchNorm, Conv2d, ConvTape, Linear, Mode, NormTape, Param, Parameterized};
use super::tensor::FeatureMap;
use crate::data::MNIST_SIDE;
use crate::error::{Error, Result};

/// Width of the flattened conv-stack output (`64 * 7 * 7`).
pub const FEATURE_DIM: usize = 64 * 7 * 7;

/// Conv stack `28x28x1 -> 28x28x8 -> 14x14x16 -> 14x14x32 -> 7x7x64`, each
/// conv followed by batch norm and a leaky rectifier, then an affine
/// real/fake head.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: [Conv2d; 4],
    norms: [BatchNorm; 4],
    head: Linear,
}

/// Intermediates kept for [`Discriminator::backward_features`].
pub struct DiscriminatorTape {
    convs: Vec<ConvTape>,
    norms: Vec<NormTape>,
    /// Post-rectifier output of each block.
    acts: Vec<FeatureMap>,
    features: Vec<f32>,
    batch: usize,
}

impl DiscriminatorTape {
    /// Flattened embedding features, `N x 3136`.
    pub fn features(&self) -> &[f32] {
        &self.features
    }
}

impl Discriminator {
    pub fn new(rng: &mut impl Rng) -> Self {
        let convs = [
            Conv2d::new("conv1", 1, 8, 3, 1, 1, rng),
            Conv2d::new("conv2", 8, 16, 3, 2, 1, rng),
            Conv2d::new("conv3", 16, 32, 3, 1, 1, rng),
            Conv2d::new("conv4", 32, 64, 3, 2, 1, rng),
        ];
        let norms = [
            BatchNorm::new("bn1", 8, rng),
            BatchNorm::new("bn2", 16, rng),
            BatchNorm::new("bn3", 32, rng),
            BatchNorm::new("bn4", 64, rng),
        ];
        Self {
            convs,
            norms,
            head: Linear::new("head", FEATURE_DIM, 1, rng),
        }
    }

    fn check_images(images: &FeatureMap) -> Result<()> {
        if images.channels != 1 || images.height != MNIST_SIDE || images.width != MNIST_SIDE {
            return Err(Error::Shape(format!(
                "expected {MNIST_SIDE}x{MNIST_SIDE}x1 images, got {}x{}x{}",
                images.height, images.width, images.channels
            )));
        }
        if images.batch == 0 {
            return Err(Error::EmptyInput("empty image batch".into()));
        }
        Ok(())
    }

    /// Runs the conv stack. Returns `N x 3136` features.
    pub fn forward_features(&self, images: &FeatureMap, mode: Mode) -> Result<DiscriminatorTape> {
        Self::check_images(images)?;
        let mut convs = Vec::with_capacity(4);
        let mut norms = Vec::with_capacity(4);
        let mut acts: Vec<FeatureMap> = Vec::with_capacity(4);
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            let input = acts.last().unwrap_or(images);
            let (u, ct) = conv.forward(input);
            let (mut y, nt) = bn.forward(&u.data, mode);
            layers::leaky_relu(&mut y);
            convs.push(ct);
            norms.push(nt);
            acts.push(FeatureMap { data: y, ..u });
        }
        let features = acts[3].flatten_samples();
        Ok(DiscriminatorTape {
            convs,
            norms,
            acts,
            features,
            batch: images.batch,
        })
    }

    /// Real/fake logits for features produced by [`Self::forward_features`].
    pub fn head_logits(&self, features: &[f32], batch: usize) -> Vec<f32> {
        self.head.forward(features, batch)
    }

    pub fn head_backward(&mut self, features: &[f32], batch: usize, d_logits: &[f32]) -> Vec<f32> {
        self.head
            .backward(features, batch, d_logits, true)
            .expect("dx requested")
    }

    pub fn commit(&mut self, tape: &DiscriminatorTape) {
        for (bn, nt) in self.norms.iter_mut().zip(&tape.norms) {
            bn.commit(nt);
        }
    }

    /// Backpropagates `d loss / d features` through the conv stack,
    /// accumulating parameter gradients; returns `d loss / d images` when asked.
    pub fn backward_features(&mut self, tape: &DiscriminatorTape, d_features: &[f32], want_dx: bool) -> Option<FeatureMap> {
        let last = &tape.acts[3];
        let mut d = FeatureMap::unflatten_samples(d_features, last.channels, tape.batch, last.height, last.width);
        for i in (0..4).rev() {
            layers::leaky_relu_backward(&tape.acts[i].data, &mut d.data);
            let du = self.norms[i].backward(&tape.norms[i], &d.data);
            let du = FeatureMap { data: du, ..d };
            let need = i > 0 || want_dx;
            match self.convs[i].backward(&tape.convs[i], &du, need) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    /// Evaluation-mode probability that each image is real.
    pub fn discriminate(&self, images: &FeatureMap) -> Result<Vec<f64>> {
        let tape = self.forward_features(images, Mode::Eval)?;
        Ok(self
            .head_logits(&tape.features, images.batch)
            .into_iter()
            .map(layers::sigmoid)
            .collect())
    }

    /// Parameters of the conv stack only (no real/fake head).
    pub fn stack_params(&self) -> Vec<&Param> {
        self.convs
            .iter()
            .zip(&self.norms)
            .flat_map(|(c, b)| c.params().into_iter().chain(b.params()))
            .collect()
    }

    pub fn stack_params_mut(&mut self) -> Vec<&mut Param> {
        Self::stack_of(&mut self.convs, &mut self.norms)
    }

    fn stack_of<'a>(convs: &'a mut [Conv2d; 4], norms: &'a mut [BatchNorm; 4]) -> Vec<&'a mut Param> {
        convs
            .iter_mut()
            .zip(norms.iter_mut())
            .flat_map(|(c, b)| c.params_mut().into_iter().chain(b.params_mut()))
            .collect()
    }
}

impl Parameterized for Discriminator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.stack_params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Self::stack_of(&mut self.convs, &mut self.norms);
        v.extend(self.head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images(n: usize, side: usize, rng: &mut impl Rng) -> FeatureMap {
        FeatureMap {
            channels: 1,
            batch: n,
            height: side,
            width: side,
            data: (0..n * side * side).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        }
    }

    #[test]
    fn stack_yields_3136_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::new(&mut rng);
        let tape = d.forward_features(&images(1, 28, &mut rng), Mode::Eval).unwrap();
        assert_eq!(tape.features().len(), FEATURE_DIM);
        assert_eq!((tape.acts[3].height, tape.acts[3].width, tape.acts[3].channels), (7, 7, 64));
    }

    #[test]
    fn probabilities_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::new(&mut rng);
        let p = d.discriminate(&images(5, 28, &mut rng)).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let single = d.discriminate(&images(1, 28, &mut rng)).unwrap();
        assert!(single[0].is_finite());
    }

    #[test]
    fn rejects_wrong_image_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::new(&mut rng);
        assert!(matches!(d.discriminate(&images(2, 32, &mut rng)), Err(Error::Shape(_))));
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Discriminator::new(&mut rng);
        let x = images(3, 28, &mut rng);
        let objective = |imgs: &FeatureMap| -> f64 {
            let t = d.forward_features(imgs, Mode::Train).unwrap();
            d.head_logits(t.features(), 3).iter().map(|&v| f64::from(v)).sum()
        };
        let tape = d.forward_features(&x, Mode::Train).unwrap();
        let mut dd = d.clone();
        let df = dd.head_backward(tape.features(), 3, &[1.0; 3]);
        let dx = dd.backward_features(&tape, &df, true).unwrap();
        for idx in [100usize, 900, 2000] {
            let h = 1e-2;
            let mut p = x.clone();
            p.data[idx] += h;
            let mut m = x.clone();
            m.data[idx] -= h;
            let num = (objective(&p) - objective(&m)) / (2.0 * f64::from(h));
            let ana = f64::from(dx.data[idx]);
            assert!((num - ana).abs() < 5e-2 * num.abs().max(1e-3), "pixel {idx}: {num} vs {ana}");
        }
    }
}
