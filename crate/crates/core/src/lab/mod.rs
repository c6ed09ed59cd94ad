//! Continual fine-tuning experiments: pretrain on an old task, fine-tune on
//! a new one under a chosen schedule, and record per-step forgetting
//! `L_old(theta_{i+1}) - L_old(theta_i)` on a fixed held-out old set.

pub mod log;
mod matching;
mod task;
mod train;

pub use matching::{match_final_loss, MatchBudget, MatchKnob, MatchOutcome, MATCH_TOLERANCE};
pub use task::{GeneratorSpec, TaskData, TaskFamily, TaskPair};
pub use train::{
    clip_gradient, finetune, pretrain, reference_finch, BatchSampler, EvalPoint, RunResult, StepRecord, TrainConfig,
    DEFAULT_L2_LAMBDA,
};
