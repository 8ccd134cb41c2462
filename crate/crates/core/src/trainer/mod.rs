//! Batching, optimization, metrics and checkpoints.

mod adam;
mod batching;
mod checkpoint;
mod config;
mod metrics;
mod run;

pub use adam::Adam;
pub use batching::{epoch_rng, make_batches};
pub use checkpoint::{Checkpoint, TrainState, MAGIC};
pub use config::{BatchMode, TrainConfig};
pub use metrics::{
    evaluate, evaluate_accuracy, evaluate_rmse, loss_by_position, metrics_csv, parse_metrics_csv,
    views, Evaluation, MetricsRecord, PositionLoss, METRICS_HEADER,
};
pub use run::{
    transfer_run, transfer_trainer, NoObserver, Observer, RunDir, Trainer, TransferVariant,
};
