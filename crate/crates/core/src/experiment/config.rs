use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nets::HeadMode;
use crate::score::{BandwidthPolicy, KdePolicy};
use crate::train::{CellConfig, GanTrainConfig, IBTrainConfig};

pub const CONFIG_SCHEMA: u32 = 1;

/// Replaces the configured output directory when set.
pub const OUTPUT_ROOT_ENV: &str = "IBOOD_OUTPUT_ROOT";

/// Top-level TOML configuration. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Directory with the four MNIST IDX files, plain or gzipped.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub ood_classes: Vec<u8>,
    pub n_support: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub head: HeadMode,
    pub gan: GanTrainConfig,
    pub ib: IBTrainConfig,
    pub kde: KdePolicy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            data_dir: PathBuf::from("data/mnist"),
            output_dir: PathBuf::from("runs/default"),
            ood_classes: (0..NUM_CLASSES as u8).collect(),
            n_support: 10,
            repetitions: 10,
            base_seed: 0,
            head: HeadMode::default(),
            gan: GanTrainConfig::default(),
            ib: IBTrainConfig::default(),
            kde: KdePolicy::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("cannot serialize config: {e}")))
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn cell_config(&self) -> CellConfig {
        CellConfig {
            n_support: self.n_support,
            head: self.head,
            gan: self.gan.clone(),
            ib: self.ib.clone(),
            kde: self.kde,
        }
    }

    /// Field-level problems, including paths that do not exist.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != CONFIG_SCHEMA {
            out.push(format!(
                "schema_version must be {CONFIG_SCHEMA}, got {}",
                self.schema_version
            ));
        }
        if !self.data_dir.is_dir() {
            out.push(format!("data_dir {} is not a directory", self.data_dir.display()));
        }
        if self.ood_classes.is_empty() {
            out.push("ood_classes must not be empty".into());
        }
        if let Some(c) = self.ood_classes.iter().find(|&&c| usize::from(c) >= NUM_CLASSES) {
            out.push(format!("ood_classes: {c} is outside 0..{NUM_CLASSES}"));
        }
        if self.ood_classes.iter().collect::<BTreeSet<_>>().len() != self.ood_classes.len() {
            out.push("ood_classes contains duplicates".into());
        }
        if self.n_support == 0 {
            out.push("n_support must be at least 1".into());
        }
        if self.repetitions == 0 {
            out.push("repetitions must be at least 1".into());
        }
        if let HeadMode::Projected { dim } = self.head {
            if dim < 2 {
                out.push(format!("head.dim must be at least 2, got {dim}"));
            }
        }
        if let BandwidthPolicy::Fixed { h } = self.kde.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                out.push(format!("kde.bandwidth.h must be positive, got {h}"));
            }
        }
        out.extend(self.gan.problems());
        out.extend(self.ib.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}
