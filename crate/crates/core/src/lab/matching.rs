//! Fair-comparison harness: tune one schedule until both runs reach the same
//! final new-task loss.

use super::task::TaskData;
use super::train::{finetune, TrainConfig};
use crate::error::LabError;
use crate::model::ModelParams;

/// Relative agreement required between final new-task losses.
pub const MATCH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKnob {
    /// Lengthen (or shorten) the weaker run.
    Steps,
    /// Rescale the weaker run's rate (`lr`, `peak_lr`, or `eta_base` and `eta_max`).
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchBudget {
    pub knob: MatchKnob,
    /// Bisection rounds after the bracket is found.
    pub rounds: usize,
    /// Ceiling for step extension, or for the rate factor under `Rate`.
    pub max_steps: usize,
    pub max_factor: f64,
    pub tolerance: f64,
}

impl Default for MatchBudget {
    fn default() -> Self {
        Self {
            knob: MatchKnob::Rate,
            rounds: 10,
            max_steps: 20_000,
            max_factor: 1024.0,
            tolerance: MATCH_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub a: TrainConfig,
    pub b: TrainConfig,
    pub final_loss_a: f64,
    pub final_loss_b: f64,
    /// Number of fine-tuning runs executed.
    pub runs: usize,
    /// Bisection rounds used after bracketing.
    pub rounds: usize,
}

fn final_new_loss(theta0: &ModelParams, data: &TaskData, cfg: &TrainConfig) -> Result<f64, LabError> {
    match finetune(theta0, data, cfg) {
        Ok(r) => Ok(r.final_eval().new_loss),
        // an over-aggressive candidate counts as "loss too high"
        Err(LabError::Diverged { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn within(loss: f64, target: f64, tol: f64) -> bool {
    (loss - target).abs() <= tol * target
}

fn apply(base: &TrainConfig, knob: MatchKnob, value: f64) -> TrainConfig {
    let mut cfg = base.clone();
    match knob {
        MatchKnob::Steps => {
            let steps = value.round().max(1.0) as usize;
            cfg.steps = steps;
            cfg.schedule = base.schedule.with_total_steps(steps as u64);
        }
        MatchKnob::Rate => cfg.schedule = base.schedule.with_rate_scaled(value),
    }
    cfg
}

/// Adjust the weaker of two configurations (higher final new-task loss)
/// until the final losses agree within `budget.tolerance` relative to the
/// stronger run.
pub fn match_final_loss(
    theta0: &ModelParams,
    data: &TaskData,
    a: &TrainConfig,
    b: &TrainConfig,
    budget: MatchBudget,
) -> Result<MatchOutcome, LabError> {
    if a == b {
        let l = final_new_loss(theta0, data, a)?;
        return Ok(MatchOutcome {
            a: a.clone(),
            b: b.clone(),
            final_loss_a: l,
            final_loss_b: l,
            runs: 1,
            rounds: 0,
        });
    }
    let la = final_new_loss(theta0, data, a)?;
    let lb = final_new_loss(theta0, data, b)?;
    let mut runs = 2;
    if !la.is_finite() && !lb.is_finite() {
        return Err(LabError::Incomparable("both runs diverged".into()));
    }
    let finish = |weak_is_a: bool, cfg: TrainConfig, loss: f64, runs: usize, rounds: usize| {
        if weak_is_a {
            MatchOutcome { a: cfg, b: b.clone(), final_loss_a: loss, final_loss_b: lb, runs, rounds }
        } else {
            MatchOutcome { a: a.clone(), b: cfg, final_loss_a: la, final_loss_b: loss, runs, rounds }
        }
    };
    let weak_is_a = la > lb;
    let (weak, target, weak_loss) = if weak_is_a { (a, lb, la) } else { (b, la, lb) };
    if within(weak_loss, target, budget.tolerance) {
        return Ok(finish(weak_is_a, weak.clone(), weak_loss, runs, 0));
    }

    let (start, ceiling) = match budget.knob {
        MatchKnob::Steps => (weak.steps as f64, budget.max_steps as f64),
        MatchKnob::Rate => (1.0, budget.max_factor),
    };
    // Bracket: grow the knob geometrically until the weak run is no longer worse.
    let mut lo = start;
    let mut hi = start;
    loop {
        hi = (hi * 2.0).min(ceiling);
        let cfg = apply(weak, budget.knob, hi);
        let l = final_new_loss(theta0, data, &cfg)?;
        runs += 1;
        if within(l, target, budget.tolerance) {
            return Ok(finish(weak_is_a, cfg, l, runs, 0));
        }
        if l < target {
            break;
        }
        lo = hi;
        if hi >= ceiling {
            return Err(LabError::Incomparable(format!(
                "weaker run still at loss {l} (target {target}) at the knob ceiling"
            )));
        }
    }
    let geometric = budget.knob == MatchKnob::Rate;
    for round in 1..=budget.rounds {
        let mid = if geometric { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        let cfg = apply(weak, budget.knob, mid);
        let l = final_new_loss(theta0, data, &cfg)?;
        runs += 1;
        if within(l, target, budget.tolerance) {
            return Ok(finish(weak_is_a, cfg, l, runs, round));
        }
        if l > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if budget.knob == MatchKnob::Steps && hi - lo < 1.0 {
            break;
        }
    }
    Err(LabError::Incomparable(format!(
        "no configuration within {} of target loss {target} after {} rounds",
        budget.tolerance, budget.rounds
    )))
}
