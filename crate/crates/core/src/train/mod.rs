//! Two-phase training: adversarial pre-training on the unlabeled pool,
//! then few-shot re-training of the embedding under the IB loss.

mod config;
mod gan;
mod ib;
mod log;
mod run;

pub use config::{GanTrainConfig, IBTrainConfig, PrototypeInit, TrainScope};
pub use gan::{pretrain_gan, GanState};
pub use ib::{initial_prototypes, retrain_ib};
pub use log::{LabelAudit, TrainLog, TrainRecord};
pub use run::{run_cell, run_experiment, CellConfig, CellOutcome};
