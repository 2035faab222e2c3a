use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{Ratio, ScoreReport, Stage};

pub const AGGREGATE_SCHEMA: u32 = 1;

/// AUPRC and separation of one stage across repetitions, in seed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub count: usize,
    pub mean_auprc: f64,
    /// Sample standard deviation; 0 for a single repetition.
    pub std_auprc: f64,
    pub auprc: Vec<f64>,
    pub mean_separation: Ratio,
    pub separation: Vec<Ratio>,
}

impl PhaseStats {
    fn from_reports(reports: &[&ScoreReport]) -> Self {
        let auprc: Vec<f64> = reports.iter().map(|r| r.auprc).collect();
        let separation: Vec<Ratio> = reports.iter().map(|r| r.separation).collect();
        let n = auprc.len() as f64;
        let mean = auprc.iter().sum::<f64>() / n;
        let std = if auprc.len() > 1 {
            (auprc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            count: auprc.len(),
            mean_auprc: mean,
            std_auprc: std,
            auprc,
            mean_separation: Ratio(separation.iter().map(|s| s.0).sum::<f64>() / n),
            separation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub ood_class: u8,
    pub seeds: Vec<u64>,
    pub pretrained: Option<PhaseStats>,
    pub retrained: Option<PhaseStats>,
}

impl ClassAggregate {
    /// Retrained minus pretrained mean AUPRC, when both stages are present.
    pub fn improvement(&self) -> Option<f64> {
        Some(self.retrained.as_ref()?.mean_auprc - self.pretrained.as_ref()?.mean_auprc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub auprc_estimator: String,
    pub classes: Vec<ClassAggregate>,
}

impl AggregateReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Plot-ready rows `ood_class,phase,mean_auprc,std_auprc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ood_class,phase,mean_auprc,std_auprc\n");
        for c in &self.classes {
            for (stage, stats) in [(Stage::Pretrained, &c.pretrained), (Stage::Retrained, &c.retrained)] {
                if let Some(s) = stats {
                    let _ = writeln!(out, "{},{},{},{}", c.ood_class, stage.as_str(), s.mean_auprc, s.std_auprc);
                }
            }
        }
        out
    }

    /// Writes `aggregate.json` and `aggregate.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join("aggregate.json");
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("aggregate.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

fn collect_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_reports(&path, out)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("report-") && n.ends_with(".json"))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Folds every `report-*.json` under `dir` into an [`AggregateReport`].
/// Depends only on the report contents, not on file order or timestamps.
pub fn aggregate_dir(dir: &Path) -> Result<AggregateReport> {
    let mut paths = Vec::new();
    collect_reports(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no score reports under {}", dir.display())));
    }
    let reports = paths
        .iter()
        .map(|p| ScoreReport::load(p))
        .collect::<Result<Vec<_>>>()?;

    let mut by_class: BTreeMap<u8, BTreeMap<(Stage, u64), &ScoreReport>> = BTreeMap::new();
    for (r, path) in reports.iter().zip(&paths) {
        if by_class.entry(r.ood_class).or_default().insert((r.stage, r.seed), r).is_some() {
            return Err(Error::Consistency(format!(
                "duplicate {} report for ood class {} seed {} at {}",
                r.stage.as_str(),
                r.ood_class,
                r.seed,
                path.display()
            )));
        }
    }
    let classes = by_class
        .into_iter()
        .map(|(ood_class, cells)| {
            let stage = |s: Stage| {
                let rs: Vec<&ScoreReport> = cells.iter().filter(|((st, _), _)| *st == s).map(|(_, r)| *r).collect();
                (!rs.is_empty()).then(|| PhaseStats::from_reports(&rs))
            };
            let mut seeds: Vec<u64> = cells.keys().map(|&(_, seed)| seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            ClassAggregate {
                ood_class,
                seeds,
                pretrained: stage(Stage::Pretrained),
                retrained: stage(Stage::Retrained),
            }
        })
        .collect();
    Ok(AggregateReport {
        schema_version: AGGREGATE_SCHEMA,
        auprc_estimator: "average_precision".into(),
        classes,
    })
}
