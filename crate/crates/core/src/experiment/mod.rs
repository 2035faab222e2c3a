//! Leave-one-class-out experiment orchestration: configuration, the
//! task-by-repetition grid with resumable artifacts, and aggregation.

mod aggregate;
mod config;
mod runner;

pub use aggregate::{aggregate_dir, AggregateReport, ClassAggregate, PhaseStats, AGGREGATE_SCHEMA};
pub use config::{ExperimentConfig, CONFIG_SCHEMA, OUTPUT_ROOT_ENV};
pub use runner::{cell_dir, cell_seed, load_cell_states, run, CellRecord, RunOptions, RunSummary};
