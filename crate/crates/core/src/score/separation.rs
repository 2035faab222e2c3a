use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// A non-negative ratio that may be infinite; serialized as a JSON number
/// or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Ratio(pub f64);

impl Ratio {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Ratio(v)),
            Repr::Text(t) if t == "inf" => Ok(Ratio(f64::INFINITY)),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid ratio {t:?}"))),
        }
    }
}

/// Mean pairwise distance between class centroids over mean distance of
/// samples to their own centroid, restricted to `classes`.
///
/// Collapsed classes (zero spread) give an infinite ratio.
pub fn separation_ratio(embeddings: &Matrix, labels: &[u8], classes: &[u8]) -> Result<Ratio> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if classes.len() < 2 {
        return Err(Error::InvalidInput("separation needs at least two classes".into()));
    }
    let d = embeddings.cols();
    let mut centroids = Matrix::zeros(classes.len(), d);
    let mut counts = vec![0usize; classes.len()];
    let slot = |l: u8| classes.iter().position(|&c| c == l);
    for (row, &l) in embeddings.iter_rows().zip(labels) {
        if let Some(k) = slot(l) {
            counts[k] += 1;
            for (c, v) in centroids.row_mut(k).iter_mut().zip(row) {
                *c += v;
            }
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!("class {} has no samples", classes[k])));
    }
    for (k, &n) in counts.iter().enumerate() {
        centroids.row_mut(k).iter_mut().for_each(|c| *c /= n as f64);
    }

    let mut intra = 0.0;
    let mut members = 0usize;
    for (row, &l) in embeddings.iter_rows().zip(labels) {
        if let Some(k) = slot(l) {
            intra += squared_distance(row, centroids.row(k)).sqrt();
            members += 1;
        }
    }
    intra /= members as f64;

    let mut inter = 0.0;
    let mut pairs = 0usize;
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            inter += squared_distance(centroids.row(a), centroids.row(b)).sqrt();
            pairs += 1;
        }
    }
    inter /= pairs as f64;

    Ok(Ratio(if intra == 0.0 { f64::INFINITY } else { inter / intra }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn collapsed_classes_are_infinite() {
        let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let r = separation_ratio(&z, &[1, 1, 2], &[1, 2]).unwrap();
        assert!(r.is_infinite());
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"inf\"");
        let back: Ratio = serde_json::from_str("\"inf\"").unwrap();
        assert!(back.is_infinite());
    }

    /// E||x - mu|| of a 2-D standard normal is sqrt(pi / 2).
    #[test]
    fn gaussian_clusters_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut rows = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(2 * n);
        for i in 0..2 * n {
            let offset = if i % 2 == 0 { 0.0 } else { 10.0 };
            rows.push(vec![offset + rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)]);
            labels.push((i % 2) as u8);
        }
        let z = Matrix::from_rows(&rows).unwrap();
        let r = separation_ratio(&z, &labels, &[0, 1]).unwrap().0;
        let want = 10.0 / (std::f64::consts::PI / 2.0).sqrt();
        assert!((want - 7.98).abs() < 0.01);
        assert!((r - want).abs() / want < 0.01, "{r} vs {want}");
    }

    #[test]
    fn invariant_to_sample_order_translation_and_scale() {
        let z = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![6.0, 4.0], vec![2.0, 9.0]]).unwrap();
        let labels = [0, 0, 1, 1, 2];
        let base = separation_ratio(&z, &labels, &[0, 1]).unwrap().0;

        let perm = [3, 0, 4, 2, 1];
        let zp = z.select_rows(&perm);
        let lp: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        assert!((separation_ratio(&zp, &lp, &[0, 1]).unwrap().0 - base).abs() < 1e-12);

        let moved: Vec<f64> = z.as_slice().iter().map(|v| 3.0 * v - 7.0).collect();
        let zm = Matrix::from_vec(5, 2, moved).unwrap();
        assert!((separation_ratio(&zm, &labels, &[0, 1]).unwrap().0 - base).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_an_error() {
        let z = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(separation_ratio(&z, &[0, 0], &[0, 1]).is_err());
        assert!(separation_ratio(&z, &[0, 0], &[0]).is_err());
    }
}
