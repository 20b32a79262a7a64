//! Training, evaluation, inference and checkpoints.

mod adam;
mod bench;
mod checkpoint;
mod metrics;
mod train;

pub use adam::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use bench::{bench, BenchConfig, BenchReport};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_FORMAT,
};
pub use metrics::{evaluate, hit, rank_slots, recall_report, MetricReport, RecallEntry};
pub use train::{infer, train, train_step, EpochRecord, Inference, TrainConfig, TrainOutcome};
