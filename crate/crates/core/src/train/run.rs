use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{GanTrainConfig, IBTrainConfig};
use super::gan::{pretrain_gan, stream};
use super::ib::retrain_ib;
use super::log::{LabelAudit, TrainLog};
use crate::data::{build_task, ImageDataset};
use crate::error::{Error, Result};
use crate::loss::ClassPrototypes;
use crate::nets::{save_params, Discriminator, EmbeddingHead, Generator, HeadMode};
use crate::score::{evaluate_task, KdePolicy, ScoreReport, Stage};

const HEAD_STREAM: u64 = 3;

/// Everything one (task, seed) cell needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub n_support: usize,
    pub head: HeadMode,
    pub gan: GanTrainConfig,
    pub ib: IBTrainConfig,
    pub kde: KdePolicy,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            n_support: 10,
            head: HeadMode::default(),
            gan: GanTrainConfig::default(),
            ib: IBTrainConfig::default(),
            kde: KdePolicy::default(),
        }
    }
}

/// Trained states, logs and both evaluations of one cell.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub ood_class: u8,
    pub seed: u64,
    pub generator: Generator,
    pub pretrained: Discriminator,
    pub pretrained_head: EmbeddingHead,
    pub retrained: Discriminator,
    pub retrained_head: EmbeddingHead,
    pub prototypes: ClassPrototypes,
    pub gan_log: TrainLog,
    pub ib_log: TrainLog,
    pub before: ScoreReport,
    pub after: ScoreReport,
}

impl CellOutcome {
    /// Labels consumed by every training step of both phases.
    pub fn audit(&self) -> LabelAudit {
        let mut a = self.gan_log.audit.clone();
        a.merge(&self.ib_log.audit);
        a
    }

    pub const FILES: [&'static str; 10] = [
        "generator.params",
        "discriminator-pretrained.params",
        "head-pretrained.params",
        "discriminator.params",
        "head.params",
        "prototypes.json",
        "gan_log.jsonl",
        "ib_log.jsonl",
        "report-pretrained.json",
        "report-retrained.json",
    ];

    /// Writes every artifact into `dir`, the two reports last.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let [gen, pre, pre_head, disc, head, protos, gan_log, ib_log, before, after] = Self::FILES.map(|f| dir.join(f));
        save_params(&self.generator, &gen)?;
        save_params(&self.pretrained, &pre)?;
        save_params(&self.pretrained_head, &pre_head)?;
        save_params(&self.retrained, &disc)?;
        save_params(&self.retrained_head, &head)?;
        fs::write(&protos, serde_json::to_string_pretty(&self.prototypes)?).map_err(|e| Error::io(&protos, e))?;
        self.gan_log.write_jsonl(&gan_log)?;
        self.ib_log.write_jsonl(&ib_log)?;
        self.before.save(&before)?;
        self.after.save(&after)
    }
}

/// Builds the task for `(ood_class, seed)`, runs both phases and evaluates
/// after each. Every random choice derives from `seed`.
pub fn run_cell(
    train: &ImageDataset,
    test: Arc<ImageDataset>,
    ood_class: u8,
    seed: u64,
    cfg: &CellConfig,
) -> Result<CellOutcome> {
    let task = build_task(train, test, ood_class, cfg.n_support, seed)?;
    let gan_cfg = GanTrainConfig { seed, ..cfg.gan.clone() };
    let ib_cfg = IBTrainConfig { seed, ..cfg.ib.clone() };

    let (gan, gan_log) = pretrain_gan(&task, &gan_cfg)?;
    let pretrained_head = EmbeddingHead::new(cfg.head, &mut stream(seed, HEAD_STREAM))?;
    let before = evaluate_task(&gan.discriminator, &pretrained_head, &task, &cfg.kde, Stage::Pretrained)?;
    log::info!("ood {ood_class} seed {seed}: pretrained auprc {:.4}", before.auprc);

    let mut retrained = gan.discriminator.clone();
    let mut retrained_head = pretrained_head.clone();
    let (prototypes, ib_log) = retrain_ib(&mut retrained, &mut retrained_head, &task, &ib_cfg)?;
    let after = evaluate_task(&retrained, &retrained_head, &task, &cfg.kde, Stage::Retrained)?;
    log::info!("ood {ood_class} seed {seed}: retrained auprc {:.4}", after.auprc);

    Ok(CellOutcome {
        ood_class,
        seed,
        generator: gan.generator,
        pretrained: gan.discriminator,
        pretrained_head,
        retrained,
        retrained_head,
        prototypes,
        gan_log,
        ib_log,
        before,
        after,
    })
}

/// Repetition `r` runs with seed `base_seed + r`; outcomes are persisted
/// under `out/rep-{r}` when `out` is given.
pub fn run_experiment(
    train: &ImageDataset,
    test: Arc<ImageDataset>,
    ood_class: u8,
    cfg: &CellConfig,
    repetitions: usize,
    base_seed: u64,
    out: Option<&Path>,
) -> Result<Vec<CellOutcome>> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    (0..repetitions)
        .map(|r| {
            let outcome = run_cell(train, Arc::clone(&test), ood_class, base_seed + r as u64, cfg)?;
            if let Some(dir) = out {
                outcome.persist(&dir.join(format!("rep-{r}")))?;
            }
            Ok(outcome)
        })
        .collect()
}
