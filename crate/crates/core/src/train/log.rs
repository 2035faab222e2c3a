use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::loss::LossBreakdown;

/// One JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum TrainRecord {
    Gan {
        step: usize,
        epoch: usize,
        d_loss: f64,
        g_loss: f64,
        elapsed_ms: f64,
    },
    Ib {
        step: usize,
        #[serde(flatten)]
        loss: LossBreakdown,
        elapsed_ms: f64,
    },
}

impl TrainRecord {
    pub fn step(&self) -> usize {
        match self {
            TrainRecord::Gan { step, .. } | TrainRecord::Ib { step, .. } => *step,
        }
    }

    /// Copy with `elapsed_ms` zeroed.
    pub fn without_timing(&self) -> TrainRecord {
        let mut r = self.clone();
        match &mut r {
            TrainRecord::Gan { elapsed_ms, .. } | TrainRecord::Ib { elapsed_ms, .. } => *elapsed_ms = 0.0,
        }
        r
    }
}

/// Per-label count of every sample a training step consumed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAudit {
    pub consumed: [u64; NUM_CLASSES],
}

impl LabelAudit {
    pub fn record(&mut self, labels: &[u8]) {
        for &l in labels {
            self.consumed[usize::from(l)] += 1;
        }
    }

    pub fn count(&self, label: u8) -> u64 {
        self.consumed[usize::from(label)]
    }

    pub fn merge(&mut self, other: &LabelAudit) {
        for (a, b) in self.consumed.iter_mut().zip(&other.consumed) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub audit: LabelAudit,
}

impl TrainLog {
    pub fn push(&mut self, record: TrainRecord) {
        debug_assert!(self.records.last().map_or(true, |r| {
            std::mem::discriminant(r) != std::mem::discriminant(&record) || r.step() < record.step()
        }));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Phase-2 loss values in step order.
    pub fn ib_losses(&self) -> Vec<LossBreakdown> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TrainRecord::Ib { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.audit == other.audit
            && self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.without_timing() == b.without_timing())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r)?);
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<TrainRecord>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}
