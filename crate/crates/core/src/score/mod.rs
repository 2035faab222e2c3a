//! Kernel-density anomaly scores, precision-recall evaluation and
//! class-separation diagnostics in the embedded space.

mod kde;
mod pr;
mod report;
mod separation;

pub use kde::{anomaly_score, fit_kde, BandwidthPolicy, KdeModel, KdePolicy, KdePooling, LOG_DENSITY_FLOOR};
pub use pr::{auprc, PrPoint};
pub use report::{
    embed_task, embeddings_csv, evaluate_task, score_embeddings, write_embeddings_csv, SampleScore, ScoreReport,
    Stage, TaskEmbeddings, SCORE_REPORT_SCHEMA,
};
pub use separation::{separation_ratio, Ratio};
