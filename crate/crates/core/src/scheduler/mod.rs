//! Learning-rate schedules driven by observed mini-batch losses.
//!
//! The loss-adaptive schedule sets
//! `lr_i = min(eta_base / sqrt(ema_i + epsilon), eta_max)` where `ema_i` is an
//! exponential moving average of batch losses that already includes the
//! current batch. Constant, fixed-small and warmup-cosine schedules are kept
//! as baselines and share the same [`ScheduleState::observe`] entry point.

mod ema;
mod serial;

pub use ema::EmaTracker;
pub use serial::SCHEMA_VERSION;

use crate::error::ScheduleError;
use std::f64::consts::PI;

pub const DEFAULT_ALPHA: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_ETA_MAX: f64 = 5e-5;
pub const DEFAULT_WARMUP_FRAC: f64 = 0.05;

/// Default learning-rate sweep grid.
pub const LR_GRID: [f64; 6] = [5e-6, 1e-5, 2e-5, 3e-5, 5e-5, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinchConfig {
    pub eta_base: f64,
    pub eta_max: f64,
    pub epsilon: f64,
    /// EMA coefficient on the previous average.
    pub alpha: f64,
}

impl Default for FinchConfig {
    fn default() -> Self {
        Self {
            eta_base: 2e-5,
            eta_max: DEFAULT_ETA_MAX,
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl FinchConfig {
    pub fn new(eta_base: f64, eta_max: f64) -> Self {
        Self {
            eta_base,
            eta_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        positive("eta_base", self.eta_base)?;
        positive("eta_max", self.eta_max)?;
        positive("epsilon", self.epsilon)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ScheduleError::InvalidParameter {
                name: "alpha",
                reason: format!("must lie in (0, 1), got {}", self.alpha),
            });
        }
        Ok(())
    }

    /// Unclamped inverse-root rate for a smoothed loss.
    pub fn raw_rate(&self, ema: f64) -> f64 {
        self.eta_base / (ema + self.epsilon).sqrt()
    }

    pub fn rate(&self, ema: f64) -> f64 {
        self.raw_rate(ema).min(self.eta_max)
    }

    /// True when the cap, not the inverse-root rule, determines the rate.
    pub fn is_clamped(&self, ema: f64) -> bool {
        self.raw_rate(ema) >= self.eta_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Finch(FinchConfig),
    Constant {
        lr: f64,
    },
    WarmupCosine {
        peak_lr: f64,
        warmup_frac: f64,
        total_steps: u64,
    },
    /// Same rule as `Constant`; kept distinct so logs and comparisons can
    /// label the small-rate baseline.
    FixedSmall {
        lr: f64,
    },
}

impl ScheduleSpec {
    pub fn warmup_cosine(peak_lr: f64, total_steps: u64) -> Self {
        ScheduleSpec::WarmupCosine {
            peak_lr,
            warmup_frac: DEFAULT_WARMUP_FRAC,
            total_steps,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::Finch(_) => "finch",
            ScheduleSpec::Constant { .. } => "constant",
            ScheduleSpec::WarmupCosine { .. } => "warmup_cosine",
            ScheduleSpec::FixedSmall { .. } => "fixed_small",
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            ScheduleSpec::Finch(cfg) => cfg.validate(),
            // A zero rate is accepted so neutral (no-movement) runs can be expressed.
            ScheduleSpec::Constant { lr } | ScheduleSpec::FixedSmall { lr } => {
                nonnegative("lr", lr)
            }
            ScheduleSpec::WarmupCosine {
                peak_lr,
                warmup_frac,
                total_steps,
            } => {
                positive("peak_lr", peak_lr)?;
                if !(0.0..1.0).contains(&warmup_frac) {
                    return Err(ScheduleError::InvalidParameter {
                        name: "warmup_frac",
                        reason: format!("must lie in [0, 1), got {warmup_frac}"),
                    });
                }
                if total_steps == 0 {
                    return Err(ScheduleError::InvalidParameter {
                        name: "total_steps",
                        reason: "must be at least 1".into(),
                    });
                }
                Ok(())
            }
        }
    }

    /// The rate-scale knob: `eta_base` for finch, the (peak) rate otherwise.
    pub fn rate_scale(&self) -> f64 {
        match *self {
            ScheduleSpec::Finch(c) => c.eta_base,
            ScheduleSpec::Constant { lr } | ScheduleSpec::FixedSmall { lr } => lr,
            ScheduleSpec::WarmupCosine { peak_lr, .. } => peak_lr,
        }
    }

    /// Copy with the rate-scale knob multiplied by `factor`. For finch the
    /// cap is scaled too so the clamp region stays put.
    pub fn with_rate_scaled(&self, factor: f64) -> Self {
        match *self {
            ScheduleSpec::Finch(c) => ScheduleSpec::Finch(FinchConfig {
                eta_base: c.eta_base * factor,
                eta_max: c.eta_max * factor,
                ..c
            }),
            ScheduleSpec::Constant { lr } => ScheduleSpec::Constant { lr: lr * factor },
            ScheduleSpec::FixedSmall { lr } => ScheduleSpec::FixedSmall { lr: lr * factor },
            ScheduleSpec::WarmupCosine {
                peak_lr,
                warmup_frac,
                total_steps,
            } => ScheduleSpec::WarmupCosine {
                peak_lr: peak_lr * factor,
                warmup_frac,
                total_steps,
            },
        }
    }

    /// Copy adjusted to a new run length (only warmup-cosine depends on it).
    pub fn with_total_steps(&self, steps: u64) -> Self {
        match *self {
            ScheduleSpec::WarmupCosine {
                peak_lr,
                warmup_frac,
                ..
            } => ScheduleSpec::WarmupCosine {
                peak_lr,
                warmup_frac,
                total_steps: steps.max(1),
            },
            other => other,
        }
    }
}

/// Number of linear-warmup steps, `ceil(warmup_frac * total_steps)`.
pub fn warmup_steps(warmup_frac: f64, total_steps: u64) -> u64 {
    ((warmup_frac * total_steps as f64).ceil() as u64).min(total_steps)
}

fn warmup_cosine_rate(peak: f64, warmup_frac: f64, total: u64, step: u64) -> f64 {
    let w = warmup_steps(warmup_frac, total);
    if step < w {
        peak * (step + 1) as f64 / w as f64
    } else {
        let span = (total - w) as f64;
        let progress = (step - w) as f64 / span;
        peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Evolving scheduler: the only producer of learning rates in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    spec: ScheduleSpec,
    ema: Option<EmaTracker>,
    step: u64,
    last_lr: Option<f64>,
}

impl ScheduleState {
    pub fn new(spec: ScheduleSpec) -> Result<Self, ScheduleError> {
        spec.validate()?;
        let ema = match spec {
            ScheduleSpec::Finch(cfg) => Some(EmaTracker::new(cfg.alpha)?),
            _ => None,
        };
        Ok(Self {
            spec,
            ema,
            step: 0,
            last_lr: None,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Number of losses observed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn last_lr(&self) -> Option<f64> {
        self.last_lr
    }

    pub fn ema(&self) -> Option<&EmaTracker> {
        self.ema.as_ref()
    }

    /// Whether the most recent finch rate was set by the cap.
    pub fn last_clamped(&self) -> bool {
        match (self.spec, self.ema.as_ref().and_then(EmaTracker::value)) {
            (ScheduleSpec::Finch(cfg), Some(v)) => cfg.is_clamped(v),
            _ => false,
        }
    }

    /// Feed one batch loss and return the rate for this step.
    ///
    /// On error the state is left untouched.
    pub fn observe(&mut self, batch_loss: f64) -> Result<f64, ScheduleError> {
        if !batch_loss.is_finite() || batch_loss < 0.0 {
            return Err(ScheduleError::InvalidLoss(batch_loss));
        }
        let lr = match self.spec {
            ScheduleSpec::Finch(cfg) => {
                let ema = self.ema.as_mut().expect("finch state carries an EMA");
                let smoothed = ema.observe(batch_loss);
                cfg.rate(smoothed)
            }
            ScheduleSpec::Constant { lr } | ScheduleSpec::FixedSmall { lr } => lr,
            ScheduleSpec::WarmupCosine {
                peak_lr,
                warmup_frac,
                total_steps,
            } => {
                if self.step >= total_steps {
                    return Err(ScheduleError::Exhausted {
                        step: self.step,
                        total: total_steps,
                    });
                }
                warmup_cosine_rate(peak_lr, warmup_frac, total_steps, self.step)
            }
        };
        self.step += 1;
        self.last_lr = Some(lr);
        Ok(lr)
    }

    /// Value-style variant of [`observe`](Self::observe).
    pub fn observed(mut self, batch_loss: f64) -> Result<(Self, f64), ScheduleError> {
        let lr = self.observe(batch_loss)?;
        Ok((self, lr))
    }

    /// Canonical v1 text rendering; see [`restore`](Self::restore).
    pub fn snapshot(&self) -> String {
        serial::render(self)
    }

    pub fn restore(text: &str) -> Result<Self, ScheduleError> {
        serial::parse(text)
    }
}

/// Per-step `lr * sqrt(ema + epsilon)` for a finch run.
///
/// On steps where the cap is inactive this reproduces `eta_base`.
pub fn kappa_trace(history: &[(f64, f64)], epsilon: f64) -> Vec<f64> {
    history
        .iter()
        .map(|&(ema, lr)| lr * (ema + epsilon).sqrt())
        .collect()
}

fn positive(name: &'static str, v: f64) -> Result<(), ScheduleError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ScheduleError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {v}"),
        })
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<(), ScheduleError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ScheduleError::InvalidParameter {
            name,
            reason: format!("must be nonnegative and finite, got {v}"),
        })
    }
}
