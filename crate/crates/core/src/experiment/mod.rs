//! Experiment configuration, the parallel run grid, persistence, reports and
//! post-training compression of checkpoints.
//!
//! Output layout under the configured directory: `config.json`,
//! `runs/<label>.json`, `checkpoints/<label>-seed<s>.bin`, and for reports
//! `report.csv` and `report.json`.

mod config;
mod report;
mod runner;

pub use config::{Cell, CompressOptions, DatasetConfig, ExperimentConfig, ModeKind, OptimizerKind};
pub use report::{
    load_records, mean, summarize, write_csv, write_report, MemoryReduction, Report, SliceDelta,
    SummaryRow, CSV_COLUMNS,
};
pub use runner::{
    checkpoint_bytes, checkpoint_path, compress_checkpoint, compress_model, evaluate_slices,
    hash_dataset, prepare_dataset, run_and_persist, run_experiment, run_one, threads_from_env,
    CheckpointMeta, CompressReport, CompressedEval, RunRecord, SeedResult, SliceEval, TrainedRun,
    THREADS_ENV,
};
