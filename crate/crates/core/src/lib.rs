//! Loss-adaptive learning-rate scheduling and a small numerical laboratory
//! for measuring catastrophic forgetting in softmax models.
//!
//! The crate is organised bottom-up:
//!
//! * [`scheduler`] turns a stream of mini-batch losses into learning rates
//!   (the loss-adaptive rule plus constant and warmup-cosine baselines).
//! * [`model`] holds small differentiable softmax networks with analytic
//!   gradients, logit Jacobians and Hessian probes.
//! * [`lab`] pretrains on an old task, fine-tunes on a new one and logs the
//!   per-step change of the held-out old-task loss.
//! * [`verify`] certifies the per-step forgetting bound and its ingredients
//!   on recorded trajectories.

pub mod error;
pub mod lab;
pub mod model;
pub mod numeric;
pub mod scheduler;
pub mod verify;

pub use error::{DataError, LabError, ModelError, ScheduleError, VerifyError};
pub use lab::{
    finetune, match_final_loss, pretrain, BatchSampler, RunResult, StepRecord, TaskData, TaskFamily,
    TaskPair, TrainConfig,
};
pub use model::{Architecture, Batch, Dataset, LabeledExample, ModelParams, SequenceExample};
pub use scheduler::{EmaTracker, FinchConfig, ScheduleSpec, ScheduleState};
pub use verify::{BoundConstants, BoundReport};
