//! Losses, optimization, the experiment variants, estimator pretraining and
//! the gradient-flow probe.

mod checkpoint;
mod config;
mod loss;
mod model;
mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ExperimentConfig, ModelConfig, PretrainConfig, Variant};
pub use loss::{forecast_loss, forecast_loss_grad, ForecastLossOp};
pub use model::{Assignment, Forecaster, ForecasterOp, ForwardPass, Gradients, COURT_CENTER, POSITION_SCALE};
pub use run::{
    assignment_for, evaluate, gradient_probe, history_csv, pretrain_dist_estimator, probe_csv, reference_order,
    train, EpochRecord, EvalReport, PretrainReport, ProbeRow, Sgd, TrainOutcome, HARD_EPSILON, HISTORY_HEADER,
    PROBE_HEADER,
};
