//! The information-bottleneck training objective.
//!
//! Two empirical estimates are combined into `total = compression - beta * relevance`:
//!
//! * the compression term estimates `I(X;Z)` from a Dirac-mixture marginal and an
//!   isotropic Gaussian conditional around each embedded sample. Up to constants
//!   it is the negative mean squared distance over all ordered sample pairs, so
//!   minimizing it pushes every pair apart.
//! * the relevance term estimates `I(Y;Z)` with one isotropic Gaussian per class.
//!   It is the mean log posterior of the true class with all class biases at
//!   zero, i.e. the negated MCDD MAP loss without its prior term.
//!
//! Every loss comes with a closed-form gradient with respect to the embeddings,
//! the prototype centers and the prototype log-scales; [`gradcheck`] verifies
//! them against central differences.

pub mod gradcheck;
mod terms;

use serde::{Deserialize, Serialize};

pub use terms::{
    class_distance, compression_term, compression_term_with_grad, ib_loss, ib_loss_with_grad,
    mcdd_loss, mcdd_loss_with_grad, relevance_term, relevance_term_with_grad,
};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Embedded samples with class indices in `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    z: Matrix,
    y: Vec<usize>,
    num_classes: usize,
}

impl EmbeddingBatch {
    pub fn new(z: Matrix, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if z.rows() != y.len() {
            return Err(Error::Shape(format!("{} embeddings but {} labels", z.rows(), y.len())));
        }
        if z.rows() == 0 {
            return Err(Error::EmptyInput("embedding batch has no rows".into()));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!("label {bad} outside 0..{num_classes}")));
        }
        if !z.is_finite() {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        Ok(Self { z, y, num_classes })
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }
}

/// Per-class Gaussian components: centers, log-scales and log-prior biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototypes {
    pub mu: Matrix,
    /// `sigma_k = exp(log_sigma_k)`, positive by construction.
    pub log_sigma: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassPrototypes {
    pub fn new(mu: Matrix, log_sigma: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let k = mu.rows();
        if log_sigma.len() != k || bias.len() != k {
            return Err(Error::Shape(format!(
                "{k} centers, {} scales, {} biases",
                log_sigma.len(),
                bias.len()
            )));
        }
        let p = Self { mu, log_sigma, bias };
        p.check_finite()?;
        Ok(p)
    }

    /// Centers at the class means of `batch`, scales at the per-class
    /// isotropic standard deviation, zero biases.
    pub fn from_class_means(batch: &EmbeddingBatch) -> Result<Self> {
        let (k, d) = (batch.num_classes(), batch.dim());
        let counts = batch.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidInput(format!("class {missing} has no samples")));
        }
        let mut mu = Matrix::zeros(k, d);
        for (row, &l) in batch.z().iter_rows().zip(batch.labels()) {
            for (m, v) in mu.row_mut(l).iter_mut().zip(row) {
                *m += v / counts[l] as f64;
            }
        }
        let mut spread = vec![0.0; k];
        for (row, &l) in batch.z().iter_rows().zip(batch.labels()) {
            spread[l] += squared_distance(row, mu.row(l)) / (counts[l] * d) as f64;
        }
        let log_sigma = spread.iter().map(|&v| 0.5 * v.max(1e-12).ln()).collect();
        Self::new(mu, log_sigma, vec![0.0; k])
    }

    /// Sets `b_k = log(n_k / N)` from the class frequencies of `batch`.
    pub fn with_log_prior_bias(mut self, batch: &EmbeddingBatch) -> Self {
        let n = batch.len() as f64;
        self.bias = batch
            .class_counts()
            .iter()
            .map(|&c| (c as f64 / n).ln())
            .collect();
        self
    }

    pub fn num_classes(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.log_sigma[k].exp()
    }

    fn check_finite(&self) -> Result<()> {
        if !self.mu.is_finite()
            || self.log_sigma.iter().any(|v| !v.is_finite())
            || self.bias.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite prototype parameter".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IBLossConfig {
    /// Weight of the relevance term.
    pub beta: f64,
    /// Scale of the per-sample conditional Gaussian in the compression term.
    pub sigma_z: f64,
    /// Whether the constant `d * log(sigma_z)` enters the compression value.
    /// The class distances inside the posterior always carry `d * log(sigma_k)`
    /// because the class scales are trained.
    pub include_log_sigma_term: bool,
}

impl Default for IBLossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            sigma_z: 1.0,
            include_log_sigma_term: false,
        }
    }
}

impl IBLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.sigma_z > 0.0 && self.sigma_z.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_z must be positive, got {}", self.sigma_z)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub compression: f64,
    pub relevance: f64,
    pub total: f64,
}

/// Gradient of a scalar loss with respect to every differentiable input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub z: Matrix,
    pub mu: Matrix,
    pub log_sigma: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub(crate) fn zeros(n: usize, k: usize, d: usize) -> Self {
        Self {
            z: Matrix::zeros(n, d),
            mu: Matrix::zeros(k, d),
            log_sigma: vec![0.0; k],
            bias: vec![0.0; k],
        }
    }

    pub(crate) fn scaled_add(&mut self, other: &Gradients, alpha: f64) {
        let pairs = [
            (self.z.as_mut_slice(), other.z.as_slice()),
            (self.mu.as_mut_slice(), other.mu.as_slice()),
            (self.log_sigma.as_mut_slice(), other.log_sigma.as_slice()),
            (self.bias.as_mut_slice(), other.bias.as_slice()),
        ];
        for (dst, src) in pairs {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += alpha * b;
            }
        }
    }
}
