//! Mixture density network over pen steps: two hidden layers (LSTM or
//! feed-forward) feeding a head with `6M + 2 + 10` outputs.

mod batch;
mod config;
pub(crate) mod loss;
mod mdn;
mod network;

pub use batch::{input_vector, Batch, StepTarget};
pub use config::{LayerKind, ModelConfig, TaskMode, CLASS_COUNT, INPUT_SIZE};
pub use loss::{
    classification_loss, evaluate_batch, gradient_check, max_abs_weight, prediction_loss,
    total_loss, BatchEval, LossSettings, MaxWeight, PredictionLoss, LOG_FLOOR,
};
pub use mdn::{
    bivariate_density, mdn_transform, point_estimate, sample_offset, sample_step, MdnOutput,
};
pub use network::{Model, Stepper, Trace, DEFAULT_INIT_SCALE};
