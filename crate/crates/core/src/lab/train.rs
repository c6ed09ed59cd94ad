//! Plain mini-batch SGD with per-step old-task loss tracking.

use super::task::TaskData;
use crate::error::LabError;
use crate::model::{Dataset, ModelParams};
use crate::numeric::{all_finite, norm2};
use crate::scheduler::{EmaTracker, FinchConfig, ScheduleSpec, ScheduleState, DEFAULT_ALPHA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

/// Conventional strength of the L2-to-initialisation baseline.
pub const DEFAULT_L2_LAMBDA: f64 = 1e-3;

/// Finch settings for lab comparisons: `eta_base` at the default constant
/// rate, cap far enough above it that it rarely binds.
pub fn reference_finch() -> FinchConfig {
    FinchConfig::new(1e-2, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleSpec,
    pub steps: usize,
    pub batch_size: usize,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Strength of the `lambda * (theta - theta0)` pull toward the start point.
    pub l2_to_init: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Keep every `checkpoint_stride`-th parameter vector (plus the last).
    pub checkpoint_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::Constant { lr: 1e-2 },
            steps: 500,
            batch_size: 16,
            grad_clip: Some(1.0),
            l2_to_init: 0.0,
            seed: 0,
            eval_every: 10,
            checkpoint_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(LabError::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 || self.checkpoint_stride == 0 {
            return Err(LabError::Config("eval_every and checkpoint_stride must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(LabError::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if !(self.l2_to_init.is_finite() && self.l2_to_init >= 0.0) {
            return Err(LabError::Config("l2_to_init must be nonnegative".into()));
        }
        if let ScheduleSpec::WarmupCosine { total_steps, .. } = self.schedule {
            if (total_steps as usize) < self.steps {
                return Err(LabError::Config(format!(
                    "warmup_cosine total_steps {total_steps} shorter than run length {}",
                    self.steps
                )));
            }
        }
        Ok(())
    }
}

/// Batch `i` is a pure function of `(seed, i)`: indices are drawn with
/// replacement from a ChaCha stream selected by the step number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSampler {
    pub seed: u64,
    pub batch_size: usize,
    pub population: usize,
}

impl BatchSampler {
    pub fn indices(&self, step: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step as u64);
        (0..self.batch_size)
            .map(|_| rng.random_range(0..self.population))
            .collect()
    }
}

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub batch_loss: f64,
    pub ema_loss: f64,
    /// Norm of the batch gradient before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    /// Old-task loss before the update.
    pub old_loss: f64,
    /// Old-task loss after the update minus `old_loss`.
    pub delta_old: f64,
    pub bound: Option<f64>,
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub new_loss: f64,
    pub new_accuracy: f64,
    pub old_loss: f64,
    pub old_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<StepRecord>,
    pub initial_params: ModelParams,
    pub final_params: ModelParams,
    /// `(step, theta_step)` every `checkpoint_stride` steps, always including 0 and T.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
    pub initial_old_loss: f64,
    pub final_old_loss: f64,
    /// Left-to-right sum of the per-step `delta_old`.
    pub cumulative_forgetting: f64,
    pub eval: Vec<EvalPoint>,
    pub config: TrainConfig,
    pub sampler: BatchSampler,
    pub final_schedule: ScheduleState,
    pub wall_clock: Duration,
}

impl RunResult {
    pub fn final_eval(&self) -> &EvalPoint {
        self.eval.last().expect("evaluation always includes the final step")
    }

    pub fn params_at(&self, step: usize) -> Option<ModelParams> {
        let stride = self.config.checkpoint_stride;
        let idx = if step == self.config.steps {
            self.checkpoints.len() - 1
        } else if step.is_multiple_of(stride) {
            step / stride
        } else {
            return None;
        };
        self.checkpoints
            .get(idx)
            .filter(|(s, _)| *s == step)
            .map(|(_, t)| self.initial_params.with_theta(t.clone()))
    }

    /// Fraction of steps on which the finch cap set the rate.
    pub fn clamp_active_fraction(&self) -> f64 {
        let ScheduleSpec::Finch(cfg) = self.config.schedule else {
            return 0.0;
        };
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self.records.iter().filter(|r| cfg.is_clamped(r.ema_loss)).count();
        n as f64 / self.records.len() as f64
    }
}

fn diverged(step: usize, records: &[StepRecord], what: &str) -> LabError {
    LabError::Diverged {
        step,
        last_good: records.last().map(|r| r.step),
        what: what.to_string(),
    }
}

/// Global-norm clipping; returns whether the gradient was rescaled.
pub fn clip_gradient(grad: &mut [f64], norm: f64, max_norm: Option<f64>) -> bool {
    match max_norm {
        Some(m) if norm > m => {
            let f = m / norm;
            grad.iter_mut().for_each(|g| *g *= f);
            true
        }
        _ => false,
    }
}

fn evaluate(params: &ModelParams, step: usize, data: &TaskData) -> Result<EvalPoint, LabError> {
    let new = data.new_eval.full();
    let old = data.old_holdout.full();
    Ok(EvalPoint {
        step,
        new_loss: params.ce_loss(&new)?,
        new_accuracy: params.accuracy(&new)?,
        old_loss: params.ce_loss(&old)?,
        old_accuracy: params.accuracy(&old)?,
    })
}

/// Train on the old task from `init`. Zero steps returns `init` unchanged.
pub fn pretrain(init: &ModelParams, data: &TaskData, config: &TrainConfig) -> Result<ModelParams, LabError> {
    config.validate()?;
    check_dataset(init, &data.old_train)?;
    let sampler = BatchSampler {
        seed: config.seed,
        batch_size: config.batch_size,
        population: data.old_train.len(),
    };
    let mut params = init.clone();
    let mut schedule = ScheduleState::new(config.schedule)?;
    for step in 0..config.steps {
        let idx = sampler.indices(step);
        let (loss, mut grad) = params.loss_and_grad(&data.old_train.batch(&idx))?;
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(diverged(step, &[], "non-finite pretraining loss or gradient"));
        }
        let lr = schedule.observe(loss)?;
        let norm = norm2(&grad);
        clip_gradient(&mut grad, norm, config.grad_clip);
        for (t, g) in params.theta_mut().iter_mut().zip(&grad) {
            *t -= lr * g;
        }
    }
    if !params.is_finite() {
        return Err(diverged(config.steps, &[], "non-finite parameters after pretraining"));
    }
    Ok(params)
}

fn check_dataset(params: &ModelParams, data: &Dataset) -> Result<(), LabError> {
    if data.is_empty() {
        return Err(LabError::Config("empty dataset".into()));
    }
    data.batch(&[0]).check(&params.arch())?;
    Ok(())
}

/// Fine-tune `theta0` on the new task, logging old-task loss after every step.
///
/// Each step: sample batch `i`, compute loss and gradient, feed the loss to
/// the schedule, clip, add the L2-to-init pull, update, and re-evaluate the
/// held-out old loss.
pub fn finetune(theta0: &ModelParams, data: &TaskData, config: &TrainConfig) -> Result<RunResult, LabError> {
    config.validate()?;
    check_dataset(theta0, &data.new_train)?;
    check_dataset(theta0, &data.old_holdout)?;
    let started = Instant::now();
    let sampler = BatchSampler {
        seed: config.seed,
        batch_size: config.batch_size,
        population: data.new_train.len(),
    };
    let old_set = data.old_holdout.full();
    let mut params = theta0.clone();
    let mut schedule = ScheduleState::new(config.schedule)?;
    // Non-finch schedules still log the smoothed loss with the same recurrence.
    let mut log_ema = EmaTracker::new(DEFAULT_ALPHA)?;
    let mut records: Vec<StepRecord> = Vec::with_capacity(config.steps);
    let mut checkpoints = vec![(0, params.theta().to_vec())];
    let mut eval = vec![evaluate(&params, 0, data)?];
    let initial_old_loss = params.ce_loss(&old_set)?;
    let mut old_loss = initial_old_loss;
    let mut cumulative = 0.0;

    for step in 0..config.steps {
        let idx = sampler.indices(step);
        let (loss, mut grad) = params.loss_and_grad(&data.new_train.batch(&idx))?;
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(diverged(step, &records, "non-finite loss or gradient"));
        }
        let lr = schedule.observe(loss)?;
        let ema = match schedule.ema().and_then(EmaTracker::value) {
            Some(v) => v,
            None => log_ema.observe(loss),
        };
        let grad_norm = norm2(&grad);
        let clipped = clip_gradient(&mut grad, grad_norm, config.grad_clip);
        if config.l2_to_init > 0.0 {
            for ((g, t), t0) in grad.iter_mut().zip(params.theta()).zip(theta0.theta()) {
                *g += config.l2_to_init * (t - t0);
            }
        }
        for (t, g) in params.theta_mut().iter_mut().zip(&grad) {
            *t -= lr * g;
        }
        let next_old = params.ce_loss(&old_set)?;
        if !next_old.is_finite() || !params.is_finite() {
            return Err(diverged(step, &records, "non-finite parameters or old-task loss"));
        }
        let delta = next_old - old_loss;
        cumulative += delta;
        records.push(StepRecord {
            step,
            lr,
            batch_loss: loss,
            ema_loss: ema,
            grad_norm,
            clipped,
            old_loss,
            delta_old: delta,
            bound: None,
            slack: None,
        });
        old_loss = next_old;
        let done = step + 1;
        if done % config.checkpoint_stride == 0 || done == config.steps {
            checkpoints.push((done, params.theta().to_vec()));
        }
        if done % config.eval_every == 0 || done == config.steps {
            eval.push(evaluate(&params, done, data)?);
        }
    }

    Ok(RunResult {
        records,
        initial_params: theta0.clone(),
        final_params: params,
        checkpoints,
        initial_old_loss,
        final_old_loss: old_loss,
        cumulative_forgetting: cumulative,
        eval,
        config: config.clone(),
        sampler,
        final_schedule: schedule,
        wall_clock: started.elapsed(),
    })
}
