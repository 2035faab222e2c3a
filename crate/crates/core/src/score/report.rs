use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kde::{anomaly_score, fit_kde, KdePolicy};
use super::pr::{auprc, PrPoint};
use super::separation::{separation_ratio, Ratio};
use crate::data::OodTask;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nets::{embed_chunked, Discriminator, EmbeddingHead};

pub const SCORE_REPORT_SCHEMA: u32 = 1;

/// Images per forward pass when embedding whole splits.
const EMBED_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// After adversarial pre-training.
    Pretrained,
    /// After information-bottleneck re-training.
    Retrained,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrained => "pretrained",
            Stage::Retrained => "retrained",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    /// Row in the test split.
    pub id: usize,
    pub label: u8,
    pub is_ood: bool,
    pub score: f64,
}

/// Detection result for one task at one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub ood_class: u8,
    pub stage: Stage,
    pub seed: u64,
    pub embedding_dim: usize,
    pub bandwidth: f64,
    /// Always `"average_precision"`: step-interpolated area.
    pub auprc_estimator: String,
    pub auprc: f64,
    /// Centroid spread over intra-class spread of in-distribution test embeddings.
    pub separation: Ratio,
    pub curve: Vec<PrPoint>,
    pub samples: Vec<SampleScore>,
}

impl ScoreReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a report, rejecting other schema versions.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCORE_REPORT_SCHEMA {
            return Err(Error::Schema {
                path: path.to_owned(),
                expected: SCORE_REPORT_SCHEMA,
                found,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Embeddings of a task's support and test images in evaluation mode.
pub struct TaskEmbeddings {
    pub support: Matrix,
    pub test: Matrix,
}

pub fn embed_task(disc: &Discriminator, head: &EmbeddingHead, task: &OodTask) -> Result<TaskEmbeddings> {
    let support = embed_chunked(disc, head, task.support_set.pixels(), task.support_set.len(), EMBED_CHUNK)?;
    let test = embed_chunked(disc, head, task.test_set.pixels(), task.test_set.len(), EMBED_CHUNK)?;
    Ok(TaskEmbeddings { support, test })
}

/// Scores the task's test split by KDE over the embedded support set.
pub fn evaluate_task(
    disc: &Discriminator,
    head: &EmbeddingHead,
    task: &OodTask,
    policy: &KdePolicy,
    stage: Stage,
) -> Result<ScoreReport> {
    let emb = embed_task(disc, head, task)?;
    score_embeddings(&emb, task, policy, stage)
}

pub fn score_embeddings(emb: &TaskEmbeddings, task: &OodTask, policy: &KdePolicy, stage: Stage) -> Result<ScoreReport> {
    let model = fit_kde(emb.support.clone(), task.support_targets()?, policy)?;
    let scores = anomaly_score(&model, &emb.test)?;
    let is_ood = task.test_ood_mask();
    let (curve, area) = auprc(&scores, &is_ood)?;

    let in_dist: Vec<usize> = (0..is_ood.len()).filter(|&i| !is_ood[i]).collect();
    let labels: Vec<u8> = in_dist.iter().map(|&i| task.test_set.label(i)).collect();
    let separation = separation_ratio(&emb.test.select_rows(&in_dist), &labels, &task.in_dist_classes)?;

    let samples = scores
        .iter()
        .enumerate()
        .map(|(id, &score)| SampleScore {
            id,
            label: task.test_set.label(id),
            is_ood: is_ood[id],
            score,
        })
        .collect();
    Ok(ScoreReport {
        schema_version: SCORE_REPORT_SCHEMA,
        ood_class: task.ood_class,
        stage,
        seed: task.seed,
        embedding_dim: emb.test.cols(),
        bandwidth: model.bandwidth(),
        auprc_estimator: "average_precision".into(),
        auprc: area,
        separation,
        curve,
        samples,
    })
}

/// CSV with header `id,label,is_ood,z0,...,z{d-1}`, one row per embedding.
pub fn embeddings_csv(embeddings: &Matrix, labels: &[u8], is_ood: &[bool]) -> Result<String> {
    if labels.len() != embeddings.rows() || is_ood.len() != embeddings.rows() {
        return Err(Error::Shape("embedding export needs one label and flag per row".into()));
    }
    let mut out = String::from("id,label,is_ood");
    for j in 0..embeddings.cols() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for (i, row) in embeddings.iter_rows().enumerate() {
        let _ = write!(out, "{i},{},{}", labels[i], u8::from(is_ood[i]));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embeddings_csv(path: &Path, embeddings: &Matrix, labels: &[u8], is_ood: &[bool]) -> Result<()> {
    fs::write(path, embeddings_csv(embeddings, labels, is_ood)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let z = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let csv = embeddings_csv(&z, &[3, 8], &[false, true]).unwrap();
        assert_eq!(csv, "id,label,is_ood,z0,z1\n0,3,0,0.5,-1\n1,8,1,2,0.25\n");
    }

    #[test]
    fn report_schema_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let report = ScoreReport {
            schema_version: SCORE_REPORT_SCHEMA,
            ood_class: 8,
            stage: Stage::Pretrained,
            seed: 1,
            embedding_dim: 2,
            bandwidth: 1.0,
            auprc_estimator: "average_precision".into(),
            auprc: 0.5,
            separation: Ratio(f64::INFINITY),
            curve: vec![],
            samples: vec![],
        };
        report.save(&path).unwrap();
        assert_eq!(ScoreReport::load(&path).unwrap(), report);
        let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&path, text).unwrap();
        assert!(matches!(ScoreReport::load(&path), Err(Error::Schema { found: 7, .. })));
    }
}
