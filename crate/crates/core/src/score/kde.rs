use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, squared_distance, Matrix};

/// Lowest log-density reported; keeps scores finite far from the support.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Fixed { h: f64 },
    /// `h = M^(-1/(d+4)) * sigma`, sigma the mean per-dimension sample
    /// standard deviation of the support.
    Scott,
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::Scott
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdePooling {
    /// One density over every support point.
    #[default]
    Pooled,
    /// Highest of the per-class densities.
    PerClassMax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KdePolicy {
    #[serde(default)]
    pub bandwidth: BandwidthPolicy,
    #[serde(default)]
    pub pooling: KdePooling,
}

/// Isotropic Gaussian kernel density over embedded support examples.
#[derive(Clone, Debug)]
pub struct KdeModel {
    support: Matrix,
    labels: Vec<usize>,
    bandwidth: f64,
    pooling: KdePooling,
}

fn scott_bandwidth(support: &Matrix) -> Result<f64> {
    let (m, d) = (support.rows(), support.cols());
    if m < 2 {
        return Err(Error::DegenerateBandwidth(
            "Scott's rule needs at least two support points; configure a fixed bandwidth".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    for row in support.iter_rows() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v / m as f64;
        }
    }
    let mut var = vec![0.0; d];
    for row in support.iter_rows() {
        for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - mu) * (v - mu) / (m - 1) as f64;
        }
    }
    let sigma = var.iter().map(|v| v.sqrt()).sum::<f64>() / d as f64;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::DegenerateBandwidth(
            "support has zero variance; configure a fixed bandwidth".into(),
        ));
    }
    Ok((m as f64).powf(-1.0 / (d as f64 + 4.0)) * sigma)
}

/// Fits a density on `support` (one row per labeled example).
pub fn fit_kde(support: Matrix, labels: Vec<usize>, policy: &KdePolicy) -> Result<KdeModel> {
    if support.rows() == 0 || support.cols() == 0 {
        return Err(Error::EmptyInput("KDE support is empty".into()));
    }
    if labels.len() != support.rows() {
        return Err(Error::Shape(format!(
            "{} support rows but {} labels",
            support.rows(),
            labels.len()
        )));
    }
    if !support.is_finite() {
        return Err(Error::Numeric("non-finite support embedding".into()));
    }
    let bandwidth = match policy.bandwidth {
        BandwidthPolicy::Fixed { h } if h > 0.0 && h.is_finite() => h,
        BandwidthPolicy::Fixed { h } => {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")))
        }
        BandwidthPolicy::Scott => scott_bandwidth(&support)?,
    };
    Ok(KdeModel {
        support,
        labels,
        bandwidth,
        pooling: policy.pooling,
    })
}

impl KdeModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }

    pub fn len(&self) -> usize {
        self.support.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.support.rows() == 0
    }

    fn log_density_over(&self, q: &[f64], rows: impl Iterator<Item = usize>, buf: &mut Vec<f64>) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        buf.clear();
        buf.extend(rows.map(|j| -squared_distance(q, self.support.row(j)) / (2.0 * h2)));
        let d = self.dim() as f64;
        log_sum_exp(buf) - (buf.len() as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * h2).ln()
    }

    /// Floored log-density at `q`.
    pub fn log_density(&self, q: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.len());
        let ld = match self.pooling {
            KdePooling::Pooled => self.log_density_over(q, 0..self.len(), &mut buf),
            KdePooling::PerClassMax => {
                let mut classes = self.labels.clone();
                classes.sort_unstable();
                classes.dedup();
                classes
                    .iter()
                    .map(|&c| {
                        let rows = (0..self.len()).filter(|&j| self.labels[j] == c);
                        self.log_density_over(q, rows, &mut buf)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        };
        ld.max(LOG_DENSITY_FLOOR)
    }
}

/// Negative log-density of each query row; higher means more anomalous.
pub fn anomaly_score(model: &KdeModel, queries: &Matrix) -> Result<Vec<f64>> {
    if queries.cols() != model.dim() {
        return Err(Error::Shape(format!(
            "queries live in R^{}, model in R^{}",
            queries.cols(),
            model.dim()
        )));
    }
    Ok(queries.iter_rows().map(|q| -model.log_density(q)).collect())
}
