//! Central-difference verification of the closed-form loss gradients.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    compression_term_with_grad, ib_loss_with_grad, mcdd_loss_with_grad, relevance_term_with_grad,
    ClassPrototypes, EmbeddingBatch, Gradients, IBLossConfig,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Denominator floor in the relative error, so that entries whose true
/// gradient is zero are judged by absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSelector {
    Mcdd,
    Compression,
    Relevance,
    Ib,
}

impl LossSelector {
    pub const ALL: [LossSelector; 4] = [Self::Mcdd, Self::Compression, Self::Relevance, Self::Ib];

    fn evaluate(self, f: &Fixture) -> Result<(f64, Gradients)> {
        match self {
            Self::Mcdd => mcdd_loss_with_grad(&f.batch, &f.protos),
            Self::Compression => compression_term_with_grad(&f.batch, &f.cfg),
            Self::Relevance => relevance_term_with_grad(&f.batch, &f.protos, &f.cfg),
            Self::Ib => ib_loss_with_grad(&f.batch, &f.protos, &f.cfg).map(|(l, g)| (l.total, g)),
        }
    }
}

impl fmt::Display for LossSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Mcdd => "mcdd_loss",
            Self::Compression => "compression_term",
            Self::Relevance => "relevance_term",
            Self::Ib => "ib_loss",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub batch: EmbeddingBatch,
    pub protos: ClassPrototypes,
    pub cfg: IBLossConfig,
}

impl Fixture {
    /// Gaussian embeddings and centers, every class populated, scales near 1.
    pub fn random(n: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        if n < k || k == 0 {
            return Err(Error::InvalidInput(format!("need n >= k >= 1, got n={n}, k={k}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
        let z = Matrix::from_vec(n, d, gauss(n * d))?;
        let mu = Matrix::from_vec(k, d, gauss(k * d))?;
        let bias = gauss(k).into_iter().map(|b| 0.5 * b).collect();
        let log_sigma = gauss(k).into_iter().map(|s| 0.2 * s).collect();
        Ok(Self {
            batch: EmbeddingBatch::new(z, (0..n).map(|i| i % k).collect(), k)?,
            protos: ClassPrototypes::new(mu, log_sigma, bias)?,
            cfg: IBLossConfig {
                beta: 1.5,
                sigma_z: 1.3,
                include_log_sigma_term: true,
            },
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: LossSelector,
    pub checked: usize,
    pub max_relative_error: f64,
    /// Coordinate with the largest error, e.g. `z[3][1]`.
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Copy)]
enum Slot {
    Z(usize, usize),
    Mu(usize, usize),
    LogSigma(usize),
}

impl Slot {
    fn get_mut(self, f: &mut Fixture) -> &mut f64 {
        match self {
            Slot::Z(i, j) => &mut z_mut(&mut f.batch).row_mut(i)[j],
            Slot::Mu(k, j) => &mut f.protos.mu.row_mut(k)[j],
            Slot::LogSigma(k) => &mut f.protos.log_sigma[k],
        }
    }

    fn analytic(self, g: &Gradients) -> f64 {
        match self {
            Slot::Z(i, j) => g.z.row(i)[j],
            Slot::Mu(k, j) => g.mu.row(k)[j],
            Slot::LogSigma(k) => g.log_sigma[k],
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Z(i, j) => write!(f, "z[{i}][{j}]"),
            Slot::Mu(k, j) => write!(f, "mu[{k}][{j}]"),
            Slot::LogSigma(k) => write!(f, "log_sigma[{k}]"),
        }
    }
}

fn z_mut(batch: &mut EmbeddingBatch) -> &mut Matrix {
    &mut batch.z
}

/// Compares closed-form gradients w.r.t. `z`, `mu` and `log_sigma` with
/// central differences of step `h`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn grad_check(loss: LossSelector, fixture: &Fixture, h: f64, tolerance: f64) -> Result<GradCheckReport> {
    let (n, d, k) = (fixture.batch.len(), fixture.batch.dim(), fixture.protos.num_classes());
    if n > 8 || d > 4 || k > 3 {
        return Err(Error::InvalidInput(format!(
            "gradient check fixtures are limited to N<=8, d<=4, K<=3 (got {n}, {d}, {k})"
        )));
    }
    if !(1e-5..=1e-3).contains(&h) {
        return Err(Error::InvalidInput(format!("step {h} outside [1e-5, 1e-3]")));
    }
    let (_, analytic) = loss.evaluate(fixture)?;

    let mut slots: Vec<Slot> = Vec::new();
    slots.extend((0..n).flat_map(|i| (0..d).map(move |j| Slot::Z(i, j))));
    slots.extend((0..k).flat_map(|c| (0..d).map(move |j| Slot::Mu(c, j))));
    slots.extend((0..k).map(Slot::LogSigma));

    let mut report = GradCheckReport {
        loss,
        checked: 0,
        max_relative_error: 0.0,
        worst: String::new(),
        tolerance,
        passed: true,
    };
    let mut probe = fixture.clone();
    for slot in slots {
        let a = slot.analytic(&analytic);
        if !a.is_finite() {
            report.passed = false;
            report.worst = format!("{slot} (non-finite analytic gradient {a})");
            report.max_relative_error = f64::INFINITY;
            return Ok(report);
        }
        let x0 = *slot.get_mut(&mut probe);
        *slot.get_mut(&mut probe) = x0 + h;
        let (fp, _) = loss.evaluate(&probe)?;
        *slot.get_mut(&mut probe) = x0 - h;
        let (fm, _) = loss.evaluate(&probe)?;
        *slot.get_mut(&mut probe) = x0;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        report.checked += 1;
        if !err.is_finite() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = format!("{slot} (analytic {a:.6e}, numeric {numeric:.6e})");
        }
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}
