use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_dir, AggregateReport};
use super::config::ExperimentConfig;
use crate::data::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::nets::{load_params, Discriminator, EmbeddingHead, HeadMode};
use crate::score::Stage;
use crate::train::{run_cell, LabelAudit};

const CELL_SCHEMA: u32 = 1;
const CELL_MARKER: &str = "cell.json";
const RESOLVED_CONFIG: &str = "config.toml";

/// Seed of repetition `r` for held-out class `c`.
pub fn cell_seed(base_seed: u64, ood_class: u8, repetition: usize) -> u64 {
    base_seed + 1000 * u64::from(ood_class) + repetition as u64
}

pub fn cell_dir(output_dir: &Path, ood_class: u8, repetition: usize) -> PathBuf {
    output_dir.join(format!("ood-{ood_class}")).join(format!("rep-{repetition}"))
}

/// Completion marker written after every other artifact of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub schema_version: u32,
    pub ood_class: u8,
    pub repetition: usize,
    pub seed: u64,
    pub labels_consumed: LabelAudit,
    pub ood_samples_consumed: u64,
}

impl CellRecord {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: Self = serde_json::from_str(&text)?;
        if rec.schema_version != CELL_SCHEMA {
            return Err(Error::Schema {
                path: path.to_owned(),
                expected: CELL_SCHEMA,
                found: rec.schema_version,
            });
        }
        Ok(rec)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Skip cells whose completion marker exists.
    pub resume: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub aggregate: AggregateReport,
    pub cells_run: usize,
    pub cells_skipped: usize,
    /// Held-out-class samples consumed by training, summed over all cells.
    pub ood_samples_consumed: u64,
}

fn prepare_output(cfg: &ExperimentConfig, opts: RunOptions) -> Result<()> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = out.join(RESOLVED_CONFIG);
    if resolved.exists() {
        if !opts.resume {
            return Err(Error::InvalidInput(format!(
                "{} already holds a run; pass --resume or choose another output directory",
                out.display()
            )));
        }
        let text = fs::read_to_string(&resolved).map_err(|e| Error::io(&resolved, e))?;
        // The directory may have been moved since; only the settings must match.
        let previous = ExperimentConfig {
            output_dir: cfg.output_dir.clone(),
            ..ExperimentConfig::from_toml(&text)?
        };
        if previous != *cfg {
            return Err(Error::Consistency(format!(
                "config differs from the one recorded in {}",
                resolved.display()
            )));
        }
        return Ok(());
    }
    fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))
}

/// Runs every `(ood_class, repetition)` cell, then aggregates the persisted
/// reports into `aggregate.json` and `aggregate.csv`.
pub fn run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    prepare_output(cfg, opts)?;
    let train = ImageDataset::load_mnist_split(&cfg.data_dir, Split::Train)?;
    let test = Arc::new(ImageDataset::load_mnist_split(&cfg.data_dir, Split::Test)?);
    let cell_cfg = cfg.cell_config();

    let (mut cells_run, mut cells_skipped, mut leaked) = (0, 0, 0);
    for &ood_class in &cfg.ood_classes {
        for repetition in 0..cfg.repetitions {
            let dir = cell_dir(&cfg.output_dir, ood_class, repetition);
            let marker = dir.join(CELL_MARKER);
            if marker.exists() {
                leaked += CellRecord::load(&marker)?.ood_samples_consumed;
                cells_skipped += 1;
                log::info!("ood {ood_class} rep {repetition}: already complete");
                continue;
            }
            let seed = cell_seed(cfg.base_seed, ood_class, repetition);
            let outcome = run_cell(&train, Arc::clone(&test), ood_class, seed, &cell_cfg)?;
            outcome.persist(&dir)?;
            let audit = outcome.audit();
            let record = CellRecord {
                schema_version: CELL_SCHEMA,
                ood_class,
                repetition,
                seed,
                ood_samples_consumed: audit.count(ood_class),
                labels_consumed: audit,
            };
            leaked += record.ood_samples_consumed;
            fs::write(&marker, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&marker, e))?;
            cells_run += 1;
        }
    }
    let aggregate = aggregate_dir(&cfg.output_dir)?;
    aggregate.write(&cfg.output_dir)?;
    Ok(RunSummary {
        aggregate,
        cells_run,
        cells_skipped,
        ood_samples_consumed: leaked,
    })
}

/// Loads the discriminator and embedding head a cell saved for `stage`.
pub fn load_cell_states(dir: &Path, head: HeadMode, stage: Stage) -> Result<(Discriminator, EmbeddingHead)> {
    let (disc_file, head_file) = match stage {
        Stage::Pretrained => ("discriminator-pretrained.params", "head-pretrained.params"),
        Stage::Retrained => ("discriminator.params", "head.params"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut disc = Discriminator::new(&mut rng);
    let mut emb = EmbeddingHead::new(head, &mut rng)?;
    load_params(&mut disc, &dir.join(disc_file))?;
    load_params(&mut emb, &dir.join(head_file))?;
    Ok((disc, emb))
}
