//! Batched rollouts and the RIAL / DIAL learning rules.

mod backward;
mod config;
pub mod parity;
mod rollout;
mod trainer;

pub use backward::{
    backward, batch_loss, compute_targets, dial_backward, reference_backward, rial_update,
    BackwardOut, MsgGradChain, Targets,
};
pub use config::TrainConfig;
pub use rollout::{rollout_batch, saturation_fraction, RolloutMode, StepRecord, TrajectoryBatch};
pub use trainer::{
    batches_saturation, config_hash, csv_meta, default_out_dir, train, BatchReport, CurveRow,
    LearningCurve, Trainer, VERSION,
};
