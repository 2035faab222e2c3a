use super::{ClassPrototypes, EmbeddingBatch, Gradients, IBLossConfig, LossBreakdown};
use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, squared_distance};

fn check_compatible(batch: &EmbeddingBatch, protos: &ClassPrototypes) -> Result<()> {
    if protos.dim() != batch.dim() {
        return Err(Error::Shape(format!(
            "prototypes live in R^{}, embeddings in R^{}",
            protos.dim(),
            batch.dim()
        )));
    }
    if protos.num_classes() != batch.num_classes() {
        return Err(Error::Shape(format!(
            "{} prototypes for {} classes",
            protos.num_classes(),
            batch.num_classes()
        )));
    }
    protos.check_finite()
}

/// `D_k(x_i) = ||z_i - mu_k||^2 / (2 sigma_k^2) [+ d log sigma_k]` for every sample.
pub fn class_distance(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    k: usize,
    include_log_sigma: bool,
) -> Result<Vec<f64>> {
    check_compatible(batch, protos)?;
    if k >= protos.num_classes() {
        return Err(Error::InvalidInput(format!(
            "class {k} outside 0..{}",
            protos.num_classes()
        )));
    }
    Ok(batch
        .z()
        .iter_rows()
        .map(|z| distance(z, protos, k, include_log_sigma))
        .collect())
}

#[inline]
fn distance(z: &[f64], protos: &ClassPrototypes, k: usize, include_log_sigma: bool) -> f64 {
    let ls = protos.log_sigma[k];
    let mut d = squared_distance(z, protos.mu.row(k)) * 0.5 * (-2.0 * ls).exp();
    if include_log_sigma {
        d += z.len() as f64 * ls;
    }
    d
}

/// Mean negative log posterior of the generative classifier and its gradient.
///
/// `use_bias = false` evaluates the loss as if every bias were zero.
fn posterior_loss(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    use_bias: bool,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    check_compatible(batch, protos)?;
    let (n, k, d) = (batch.len(), protos.num_classes(), batch.dim());
    let inv_n = 1.0 / n as f64;
    let mut grads = want_grad.then(|| Gradients::zeros(n, k, d));
    let mut loss = 0.0;
    let mut logits = vec![0.0; k];
    for (i, (z, &y)) in batch.z().iter_rows().zip(batch.labels()).enumerate() {
        for (c, l) in logits.iter_mut().enumerate() {
            let b = if use_bias { protos.bias[c] } else { 0.0 };
            *l = -distance(z, protos, c, true) + b;
        }
        let lse = log_sum_exp(&logits);
        loss += inv_n * (lse - logits[y]);

        let Some(g) = grads.as_mut() else { continue };
        for c in 0..k {
            let p = (logits[c] - lse).exp();
            // d loss / d D_ic
            let w = inv_n * (if c == y { 1.0 } else { 0.0 } - p);
            if use_bias {
                g.bias[c] -= w;
            }
            let inv_s = (-2.0 * protos.log_sigma[c]).exp();
            let mu = protos.mu.row(c);
            let mut sq = 0.0;
            for j in 0..d {
                let diff = z[j] - mu[j];
                sq += diff * diff;
                g.z.row_mut(i)[j] += w * diff * inv_s;
                g.mu.row_mut(c)[j] -= w * diff * inv_s;
            }
            let dls = -sq * inv_s + d as f64;
            g.log_sigma[c] += w * dls;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("posterior loss evaluated to {loss}")));
    }
    Ok((loss, grads))
}

/// MCDD MAP loss: mean negative log posterior with class biases, full
/// class distances (log-scale addend included).
pub fn mcdd_loss(batch: &EmbeddingBatch, protos: &ClassPrototypes) -> Result<f64> {
    posterior_loss(batch, protos, true, false).map(|(l, _)| l)
}

pub fn mcdd_loss_with_grad(batch: &EmbeddingBatch, protos: &ClassPrototypes) -> Result<(f64, Gradients)> {
    posterior_loss(batch, protos, true, true).map(|(l, g)| (l, g.expect("requested")))
}

fn compression(batch: &EmbeddingBatch, cfg: &IBLossConfig, want_grad: bool) -> Result<(f64, Option<Gradients>)> {
    cfg.validate()?;
    let (n, d) = (batch.len(), batch.dim());
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "compression term needs at least 2 samples, got {n}"
        )));
    }
    let z = batch.z();
    let mut mean = vec![0.0; d];
    for row in z.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    // sum_{i,j} ||z_i - z_j||^2 = 2 N sum_i ||z_i - mean||^2
    let scatter: f64 = z.iter_rows().map(|row| squared_distance(row, &mean)).sum();
    let inv_var = 1.0 / (cfg.sigma_z * cfg.sigma_z);
    let mut value = -scatter * inv_var / n as f64;
    if cfg.include_log_sigma_term {
        value += d as f64 * cfg.sigma_z.ln();
    }
    let grads = want_grad.then(|| {
        let mut g = Gradients::zeros(n, batch.num_classes(), d);
        let scale = -2.0 * inv_var / n as f64;
        for (i, row) in z.iter_rows().enumerate() {
            for (gj, (v, m)) in g.z.row_mut(i).iter_mut().zip(row.iter().zip(&mean)) {
                *gj = scale * (v - m);
            }
        }
        g
    });
    Ok((value, grads))
}

/// `(1/N^2) sum_j sum_i [ -||z_j - z_i||^2 / (2 sigma_z^2) (+ d log sigma_z) ]`.
pub fn compression_term(batch: &EmbeddingBatch, cfg: &IBLossConfig) -> Result<f64> {
    compression(batch, cfg, false).map(|(v, _)| v)
}

pub fn compression_term_with_grad(batch: &EmbeddingBatch, cfg: &IBLossConfig) -> Result<(f64, Gradients)> {
    compression(batch, cfg, true).map(|(v, g)| (v, g.expect("requested")))
}

/// Mean log posterior of the true class with zero biases; larger is better.
/// Equals `-mcdd_loss` evaluated with every bias set to zero.
pub fn relevance_term(batch: &EmbeddingBatch, protos: &ClassPrototypes, cfg: &IBLossConfig) -> Result<f64> {
    cfg.validate()?;
    posterior_loss(batch, protos, false, false).map(|(l, _)| -l)
}

pub fn relevance_term_with_grad(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    cfg: &IBLossConfig,
) -> Result<(f64, Gradients)> {
    cfg.validate()?;
    let (l, g) = posterior_loss(batch, protos, false, true)?;
    let mut neg = Gradients::zeros(batch.len(), protos.num_classes(), batch.dim());
    neg.scaled_add(&g.expect("requested"), -1.0);
    Ok((-l, neg))
}

/// `total = compression - beta * relevance`.
pub fn ib_loss(batch: &EmbeddingBatch, protos: &ClassPrototypes, cfg: &IBLossConfig) -> Result<LossBreakdown> {
    let compression = compression_term(batch, cfg)?;
    let relevance = relevance_term(batch, protos, cfg)?;
    Ok(LossBreakdown {
        compression,
        relevance,
        total: compression - cfg.beta * relevance,
    })
}

pub fn ib_loss_with_grad(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    cfg: &IBLossConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let (compression, mut grads) = compression_term_with_grad(batch, cfg)?;
    let (relevance, rg) = relevance_term_with_grad(batch, protos, cfg)?;
    grads.scaled_add(&rg, -cfg.beta);
    Ok((
        LossBreakdown {
            compression,
            relevance,
            total: compression - cfg.beta * relevance,
        },
        grads,
    ))
}
