//! Independent reference implementations used by the property and
//! acceptance tests. Deliberately naive: literal double loops and
//! threshold enumeration, no shared code with the library.
#![allow(dead_code)]

use std::path::PathBuf;

/// `(1/N^2) sum_j sum_i [ -||z_j - z_i||^2 / (2 s^2) + d log s ]`.
pub fn naive_compression(z: &[Vec<f64>], sigma_z: f64, include_log: bool) -> f64 {
    let n = z.len() as f64;
    let d = z[0].len() as f64;
    let mut total = 0.0;
    for zj in z {
        for zi in z {
            let sq: f64 = zj.iter().zip(zi).map(|(a, b)| (a - b) * (a - b)).sum();
            total += -sq / (2.0 * sigma_z * sigma_z);
            if include_log {
                total += d * sigma_z.ln();
            }
        }
    }
    total / (n * n)
}

/// `-log( (1/M) sum_j (2 pi h^2)^(-d/2) exp(-||q - s_j||^2 / (2 h^2)) )`
/// evaluated directly, without any log-domain tricks.
pub fn naive_score(support: &[Vec<f64>], h: f64, q: &[f64]) -> f64 {
    let d = q.len() as f64;
    let norm = (2.0 * std::f64::consts::PI * h * h).powf(-d / 2.0);
    let mut density = 0.0;
    for s in support {
        let sq: f64 = q.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
        density += norm * (-sq / (2.0 * h * h)).exp();
    }
    -(density / support.len() as f64).ln()
}

/// Average precision by enumerating every distinct threshold and counting
/// the samples at or above it from scratch.
pub fn brute_force_ap(scores: &[f64], positives: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = positives.iter().filter(|&&p| p).count() as f64;
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for t in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (s, &p) in scores.iter().zip(positives) {
            if *s >= t {
                if p {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - last_recall) * precision;
        last_recall = recall;
    }
    ap
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// The bundled MNIST subset, or the directory named by `IBOOD_MNIST_DIR`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("IBOOD_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset"))
}
