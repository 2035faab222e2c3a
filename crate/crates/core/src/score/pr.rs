use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall curve over every distinct score (descending) and its
/// average precision `sum_k (R_k - R_{k-1}) P_k`. Positives are the
/// anomalies; higher scores rank first and tied scores share a threshold.
pub fn auprc(scores: &[f64], positives: &[bool]) -> Result<(Vec<PrPoint>, f64)> {
    if scores.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 || total_pos == positives.len() {
        return Err(Error::UndefinedMetric(format!(
            "precision-recall needs both classes ({total_pos} positives of {})",
            positives.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut area, mut last_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - last_recall) * precision;
        last_recall = recall;
        curve.push(PrPoint {
            threshold,
            recall,
            precision,
        });
    }
    Ok((curve, area))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let (_, ap) = auprc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn worked_example() {
        let (curve, ap) = auprc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(curve.len(), 4);
        assert!(curve.windows(2).all(|w| w[1].recall >= w[0].recall));
    }

    #[test]
    fn ties_share_a_threshold() {
        let (curve, ap) = auprc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap();
        assert_eq!(curve.len(), 1);
        assert!((ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auprc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auprc(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedMetric(_))));
    }
}
