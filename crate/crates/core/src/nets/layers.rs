//! Layers with hand-written backward passes.
//!
//! Forward passes take `&self` and return whatever the backward pass needs;
//! backward passes take `&mut self` and accumulate into parameter grads.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{col2im, gemm, im2col, FeatureMap, Window};

pub const LEAKY_SLOPE: f32 = 0.2;
const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Running statistics; pure.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    /// Persisted state that is not optimized (batch-norm running stats).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    fn new(name: impl Into<String>, shape: Vec<usize>, kind: ParamKind, value: Vec<f32>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let grad = match kind {
            ParamKind::Weight => vec![0.0; value.len()],
            ParamKind::Buffer => Vec::new(),
        };
        Self {
            name: name.into(),
            shape,
            kind,
            value,
            grad,
        }
    }

    fn normal(name: &str, shape: Vec<usize>, mean: f32, std: f32, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(mean, std).expect("finite std");
        let len = shape.iter().product();
        let value = (0..len).map(|_| dist.sample(rng)).collect();
        Self::new(name, shape, ParamKind::Weight, value)
    }

    fn filled(name: &str, shape: Vec<usize>, kind: ParamKind, v: f32) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, kind, vec![v; len])
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Weight
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameters, visited in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(prefix: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::normal(&format!("{prefix}.weight"), vec![outputs, inputs], 0.0, 0.02, rng),
            bias: Param::filled(&format!("{prefix}.bias"), vec![outputs], ParamKind::Weight, 0.0),
            inputs,
            outputs,
        }
    }

    /// `x` is `n x inputs`; returns `n x outputs`.
    pub fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut y = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(n, self.inputs, self.outputs, x, false, &self.weight.value, true, 1.0, &mut y);
        y
    }

    pub fn backward(&mut self, x: &[f32], n: usize, dy: &[f32], want_dx: bool) -> Option<Vec<f32>> {
        gemm(self.outputs, n, self.inputs, dy, true, x, false, 1.0, &mut self.weight.grad);
        for row in dy.chunks_exact(self.outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; n * self.inputs];
            gemm(n, self.outputs, self.inputs, dy, false, &self.weight.value, false, 0.0, &mut dx);
            dx
        })
    }

    fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        Linear::params(self).to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Linear::params_mut(self).into_iter().collect()
    }
}

/// 2-D convolution, weight `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Saved by [`Conv2d::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvTape {
    cols: Vec<f32>,
    win: Window,
    batch: usize,
}

impl Conv2d {
    pub fn new(prefix: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::normal(&format!("{prefix}.weight"), vec![cout, cin, kernel, kernel], 0.0, 0.02, rng),
            bias: Param::filled(&format!("{prefix}.bias"), vec![cout], ParamKind::Weight, 0.0),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> (FeatureMap, ConvTape) {
        debug_assert_eq!(x.channels, self.in_channels);
        let win = Window::new(x.channels, x.height, x.width, self.kernel, self.stride, self.pad);
        let cols = im2col(&x.data, x.batch, &win);
        let cols_n = x.batch * win.out_h * win.out_w;
        let mut y = FeatureMap::zeros(self.out_channels, x.batch, win.out_h, win.out_w);
        for (c, chunk) in y.data.chunks_exact_mut(cols_n).enumerate() {
            chunk.fill(self.bias.value[c]);
        }
        gemm(self.out_channels, win.patch_len(), cols_n, &self.weight.value, false, &cols, false, 1.0, &mut y.data);
        (
            y,
            ConvTape {
                cols,
                win,
                batch: x.batch,
            },
        )
    }

    pub fn backward(&mut self, tape: &ConvTape, dy: &FeatureMap, want_dx: bool) -> Option<FeatureMap> {
        let win = &tape.win;
        let cols_n = tape.batch * win.out_h * win.out_w;
        let patch = win.patch_len();
        gemm(self.out_channels, cols_n, patch, &dy.data, false, &tape.cols, true, 1.0, &mut self.weight.grad);
        for (g, chunk) in self.bias.grad.iter_mut().zip(dy.data.chunks_exact(cols_n)) {
            *g += chunk.iter().sum::<f32>();
        }
        want_dx.then(|| {
            let mut dcols = vec![0.0; patch * cols_n];
            gemm(patch, self.out_channels, cols_n, &self.weight.value, true, &dy.data, false, 0.0, &mut dcols);
            let mut dx = FeatureMap::zeros(win.channels, tape.batch, win.height, win.width);
            col2im(&dcols, tape.batch, win, &mut dx.data);
            dx
        })
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed 2-D convolution, weight `[in, out, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: Param::normal(&format!("{prefix}.weight"), vec![cin, cout, kernel, kernel], 0.0, 0.02, rng),
            bias: Param::filled(&format!("{prefix}.bias"), vec![cout], ParamKind::Weight, 0.0),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            pad,
            output_pad,
        }
    }

    /// The ordinary convolution this layer is the transpose of, seen from
    /// the (large) output plane.
    fn window(&self, h: usize, w: usize) -> Window {
        let out_h = (h - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad;
        let out_w = (w - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad;
        let win = Window::new(self.out_channels, out_h, out_w, self.kernel, self.stride, self.pad);
        debug_assert_eq!((win.out_h, win.out_w), (h, w));
        win
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.channels, self.in_channels);
        let win = self.window(x.height, x.width);
        let cols_n = x.batch * x.spatial();
        let mut cols = vec![0.0; win.patch_len() * cols_n];
        gemm(win.patch_len(), self.in_channels, cols_n, &self.weight.value, true, &x.data, false, 0.0, &mut cols);
        let mut y = FeatureMap::zeros(self.out_channels, x.batch, win.height, win.width);
        col2im(&cols, x.batch, &win, &mut y.data);
        let plane = x.batch * y.spatial();
        for (c, chunk) in y.data.chunks_exact_mut(plane).enumerate() {
            let b = self.bias.value[c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        y
    }

    pub fn backward(&mut self, x: &FeatureMap, dy: &FeatureMap, want_dx: bool) -> Option<FeatureMap> {
        let win = self.window(x.height, x.width);
        let cols_n = x.batch * x.spatial();
        let patch = win.patch_len();
        let dcols = im2col(&dy.data, dy.batch, &win);
        gemm(self.in_channels, cols_n, patch, &x.data, false, &dcols, true, 1.0, &mut self.weight.grad);
        let plane = dy.batch * dy.spatial();
        for (g, chunk) in self.bias.grad.iter_mut().zip(dy.data.chunks_exact(plane)) {
            *g += chunk.iter().sum::<f32>();
        }
        want_dx.then(|| {
            let mut dx = FeatureMap::zeros(self.in_channels, x.batch, x.height, x.width);
            gemm(self.in_channels, patch, cols_n, &self.weight.value, false, &dcols, false, 0.0, &mut dx.data);
            dx
        })
    }
}

impl Parameterized for ConvTranspose2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Batch normalization over channel-major data `[C][M]`; serves both the
/// 1-D (M = batch) and 2-D (M = batch * H * W) cases.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct NormTape {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    batch_mean: Vec<f32>,
    batch_var: Vec<f32>,
    per_channel: usize,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            gamma: Param::normal(&format!("{prefix}.weight"), vec![channels], 1.0, 0.02, rng),
            beta: Param::filled(&format!("{prefix}.bias"), vec![channels], ParamKind::Weight, 0.0),
            running_mean: Param::filled(&format!("{prefix}.running_mean"), vec![channels], ParamKind::Buffer, 0.0),
            running_var: Param::filled(&format!("{prefix}.running_var"), vec![channels], ParamKind::Buffer, 1.0),
            channels,
        }
    }

    pub fn forward(&self, x: &[f32], mode: Mode) -> (Vec<f32>, NormTape) {
        let m = x.len() / self.channels;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; self.channels];
        let mut batch_mean = vec![0.0; self.channels];
        let mut batch_var = vec![0.0; self.channels];
        for c in 0..self.channels {
            let xs = &x[c * m..(c + 1) * m];
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = xs.iter().map(|&v| f64::from(v)).sum::<f64>() / m as f64;
                    let var = xs.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / m as f64;
                    (mean as f32, var as f32)
                }
                Mode::Eval => (self.running_mean.value[c], self.running_var.value[c]),
            };
            let istd = 1.0 / (var + BN_EPS).sqrt();
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for ((yv, hv), &xv) in y[c * m..(c + 1) * m].iter_mut().zip(&mut xhat[c * m..(c + 1) * m]).zip(xs) {
                *hv = (xv - mean) * istd;
                *yv = g * *hv + b;
            }
            inv_std[c] = istd;
            batch_mean[c] = mean;
            batch_var[c] = var;
        }
        (
            y,
            NormTape {
                xhat,
                inv_std,
                batch_mean,
                batch_var,
                per_channel: m,
                mode,
            },
        )
    }

    /// Folds a training-mode batch into the running statistics.
    pub fn commit(&mut self, tape: &NormTape) {
        if tape.mode != Mode::Train {
            return;
        }
        let m = tape.per_channel as f32;
        let unbias = if tape.per_channel > 1 { m / (m - 1.0) } else { 1.0 };
        for c in 0..self.channels {
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * tape.batch_mean[c];
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * tape.batch_var[c] * unbias;
        }
    }

    pub fn backward(&mut self, tape: &NormTape, dy: &[f32]) -> Vec<f32> {
        let m = tape.per_channel;
        let mut dx = vec![0.0; dy.len()];
        for c in 0..self.channels {
            let dys = &dy[c * m..(c + 1) * m];
            let xh = &tape.xhat[c * m..(c + 1) * m];
            let sum_dy: f32 = dys.iter().sum();
            let sum_dy_xh: f32 = dys.iter().zip(xh).map(|(d, h)| d * h).sum();
            self.gamma.grad[c] += sum_dy_xh;
            self.beta.grad[c] += sum_dy;
            let g = self.gamma.value[c] * tape.inv_std[c];
            let out = &mut dx[c * m..(c + 1) * m];
            match tape.mode {
                Mode::Train => {
                    let (mean_dy, mean_dy_xh) = (sum_dy / m as f32, sum_dy_xh / m as f32);
                    for ((o, &d), &h) in out.iter_mut().zip(dys).zip(xh) {
                        *o = g * (d - mean_dy - h * mean_dy_xh);
                    }
                }
                Mode::Eval => {
                    for (o, &d) in out.iter_mut().zip(dys) {
                        *o = g * d;
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for BatchNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

pub fn leaky_relu(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Backward through a leaky rectifier given its output `y` (same sign as input).
pub fn leaky_relu_backward(y: &[f32], dy: &mut [f32]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v < 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
}

pub fn relu(x: &mut [f32]) {
    for v in x {
        *v = v.max(0.0);
    }
}

pub fn relu_backward(y: &[f32], dy: &mut [f32]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn tanh(x: &mut [f32]) {
    for v in x {
        *v = v.tanh();
    }
}

pub fn tanh_backward(y: &[f32], dy: &mut [f32]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d *= 1.0 - v * v;
    }
}

/// Logistic function in double precision, kept strictly inside (0, 1).
pub fn sigmoid(logit: f32) -> f64 {
    let p = 1.0 / (1.0 + (-f64::from(logit)).exp());
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}
