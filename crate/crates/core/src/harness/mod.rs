//! Training, checkpoints, metrics, evaluation and the command line.

mod checkpoint;
pub mod cli;
mod config;
mod eval;
mod metrics;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{TaskSource, TrainConfig};
pub use eval::{evaluate, evaluate_checkpoint, write_image_grid, EvalOptions};
pub use metrics::{
    align_scale_shift, center_accuracy, center_accuracy_points, depth_metrics, fit_similarity, psnr,
    DepthMetrics, MetricReport, Similarity, CENTER_THRESHOLD, DELTA1_RATIO, PSNR_CAP,
};
pub use train::{learning_rate_at, load_datasets, train, train_on, AdamW, StepLog, TrainOutcome};
