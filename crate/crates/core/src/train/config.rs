use serde::{Deserialize, Serialize};

use crate::loss::IBLossConfig;
use crate::nets::NOISE_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f32,
    pub lr_discriminator: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub noise_dim: usize,
    pub seed: u64,
    /// Train on at most this many pool images, drawn by a seeded shuffle.
    pub pool_limit: Option<usize>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            noise_dim: NOISE_DIM,
            seed: 0,
            pool_limit: None,
        }
    }
}

impl GanTrainConfig {
    /// Field-level problems; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("gan.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            out.push("gan.batch_size must be at least 1".into());
        }
        for (name, v) in [("gan.lr_generator", self.lr_generator), ("gan.lr_discriminator", self.lr_discriminator)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("gan.beta1", self.beta1), ("gan.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                out.push(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.noise_dim != NOISE_DIM {
            out.push(format!("gan.noise_dim must be {NOISE_DIM}, got {}", self.noise_dim));
        }
        if self.pool_limit == Some(0) {
            out.push("gan.pool_limit must be at least 1 when set".into());
        }
        out
    }
}

/// Which parameters phase 2 updates besides the prototypes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    EmbeddingHeadOnly,
    FullDiscriminatorStack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeInit {
    SupportClassMeans,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IBTrainConfig {
    pub steps: usize,
    pub lr: f32,
    pub loss: IBLossConfig,
    pub scope: TrainScope,
    pub prototype_init: PrototypeInit,
    /// Set `b_k = log(n_k / N)` instead of zero.
    pub log_prior_bias: bool,
    pub seed: u64,
}

impl Default for IBTrainConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-4,
            loss: IBLossConfig::default(),
            scope: TrainScope::FullDiscriminatorStack,
            prototype_init: PrototypeInit::SupportClassMeans,
            log_prior_bias: false,
            seed: 0,
        }
    }
}

impl IBTrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps == 0 {
            out.push("ib.steps must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            out.push(format!("ib.lr must be non-negative, got {}", self.lr));
        }
        if let Err(e) = self.loss.validate() {
            out.push(format!("ib.loss: {e}"));
        }
        out
    }
}
