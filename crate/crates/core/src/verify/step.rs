//! Per-step certification of the old-task forgetting bound.

use super::constants::{labelled_items, BoundConstants};
use crate::error::VerifyError;
use crate::lab::{RunResult, TaskData};
use crate::model::ModelParams;
use crate::numeric::{norm2, sub};

/// Slack below `-VIOLATION_TOLERANCE` is a violation; anything between that
/// and zero is reported as a warning.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;
/// Allowed gap between the logged and the recomputed old-loss change.
pub const LOG_TOLERANCE: f64 = 1e-12;
/// Relative gap allowed between the two evaluations of the bound.
pub const COMPOSITION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Ok,
    Warn,
    Violation,
    /// No checkpoint pair for this step.
    Unchecked,
}

impl EntryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryStatus::Ok => "ok",
            EntryStatus::Warn => "warn",
            EntryStatus::Violation => "violation",
            EntryStatus::Unchecked => "unchecked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The logged old-loss change disagrees with the checkpoints.
    LogMismatch,
    /// Old-loss change above the largest per-example log-ratio.
    LogRatio,
    /// Largest log-ratio above the Taylor bound.
    Taylor,
    /// Taylor bound above the theorem bound.
    GradientCap,
    /// Old-loss change above the theorem bound.
    Theorem,
    /// The two evaluations of the theorem bound disagree.
    Composition,
}

impl ViolationKind {
    /// Equality checks: any gap within tolerance is rounding, not slack.
    pub fn is_identity(self) -> bool {
        matches!(self, ViolationKind::LogMismatch | ViolationKind::Composition)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::LogMismatch => "log_mismatch",
            ViolationKind::LogRatio => "log_ratio",
            ViolationKind::Taylor => "taylor",
            ViolationKind::GradientCap => "gradient_cap",
            ViolationKind::Theorem => "theorem",
            ViolationKind::Composition => "composition",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub kind: ViolationKind,
    /// How far past the allowed value the offending quantity is.
    pub excess: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBoundEntry {
    pub step: usize,
    pub lr: f64,
    pub batch_loss: f64,
    pub grad_norm: f64,
    pub delta_old: f64,
    pub delta_recomputed: f64,
    pub log_ratio_max: f64,
    pub step_norm: f64,
    pub taylor_bound: f64,
    pub bound: f64,
    pub slack: f64,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub constants: BoundConstants,
    pub entries: Vec<StepBoundEntry>,
    pub violations: Vec<Violation>,
    pub warnings: usize,
    pub unchecked: Vec<usize>,
    pub min_slack: f64,
    /// Largest realised `|g| / (M_train sqrt(2 L))` over the run.
    pub pinsker_max_ratio: f64,
    /// Largest relative gap between the two evaluations of the bound.
    pub composition_max_gap: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn checked(&self) -> usize {
        self.entries.iter().filter(|e| e.status != EntryStatus::Unchecked).count()
    }
}

struct OldProbe {
    items: Vec<(Vec<f64>, Vec<usize>)>,
}

impl OldProbe {
    fn log_probs(&self, p: &ModelParams) -> Result<Vec<Vec<f64>>, VerifyError> {
        self.items.iter().map(|(x, _)| Ok(p.log_probs(x)?)).collect()
    }
}

/// Checks every step of `run` against the bound built from `constants`.
///
/// For each step with checkpoints on both sides the chain
/// `delta <= max |log ratio| <= G|d| + H|d|^2/2 <= C1 lr sqrt(L) + C2 lr^2 L`
/// is tested link by link.
pub fn check_step_bound(run: &RunResult, data: &TaskData, constants: &BoundConstants) -> Result<BoundReport, VerifyError> {
    if run.config.l2_to_init != 0.0 {
        return Err(VerifyError::Precondition(format!(
            "the bound covers plain SGD steps; l2_to_init = {}",
            run.config.l2_to_init
        )));
    }
    let arch = run.initial_params.arch();
    let old = data.old_holdout.full();
    let probe = OldProbe {
        items: labelled_items(data.old_holdout.items(&arch)),
    };

    let mut entries = Vec::with_capacity(run.records.len());
    let mut violations = Vec::new();
    let mut warnings = 0;
    let mut unchecked = Vec::new();
    let mut min_slack = f64::INFINITY;
    let mut pinsker_max_ratio: f64 = 0.0;
    let mut composition_max_gap: f64 = 0.0;

    let mut cached: Option<(usize, ModelParams, f64, Vec<Vec<f64>>)> = None;
    for rec in &run.records {
        let i = rec.step;
        let bound = constants.theorem_bound(rec.lr, rec.batch_loss);
        let composed = constants.composed_bound(rec.lr, rec.batch_loss);
        let gap = (bound - composed).abs() / bound.abs().max(1.0);
        composition_max_gap = composition_max_gap.max(gap);
        if rec.batch_loss > 0.0 && constants.m_train > 0.0 {
            pinsker_max_ratio = pinsker_max_ratio.max(rec.grad_norm / (constants.m_train * (2.0 * rec.batch_loss).sqrt()));
        }

        let before = match cached.take() {
            Some(c) if c.0 == i => Some(c),
            _ => match run.params_at(i) {
                Some(p) => {
                    let l = p.ce_loss(&old)?;
                    let lp = probe.log_probs(&p)?;
                    Some((i, p, l, lp))
                }
                None => None,
            },
        };
        let after = run.params_at(i + 1);
        let (Some((_, p0, l0, lp0)), Some(p1)) = (before, after) else {
            unchecked.push(i);
            entries.push(StepBoundEntry {
                step: i,
                lr: rec.lr,
                batch_loss: rec.batch_loss,
                grad_norm: rec.grad_norm,
                delta_old: rec.delta_old,
                delta_recomputed: f64::NAN,
                log_ratio_max: f64::NAN,
                step_norm: f64::NAN,
                taylor_bound: f64::NAN,
                bound,
                slack: bound - rec.delta_old,
                status: EntryStatus::Unchecked,
            });
            continue;
        };
        let l1 = p1.ce_loss(&old)?;
        let lp1 = probe.log_probs(&p1)?;
        let delta = l1 - l0;

        let mut log_ratio_max: f64 = 0.0;
        for ((a, b), (_, ys)) in lp0.iter().zip(&lp1).zip(&probe.items) {
            for &y in ys {
                log_ratio_max = log_ratio_max.max((b[y] - a[y]).abs());
            }
        }
        let step_norm = norm2(&sub(p1.theta(), p0.theta()));
        let taylor = constants.taylor_bound(step_norm);
        let slack = bound - rec.delta_old;

        let mut status = EntryStatus::Ok;
        let mut flag = |kind: ViolationKind, lhs: f64, rhs: f64, tol: f64, detail: String| {
            let excess = lhs - rhs;
            if excess > tol || !excess.is_finite() {
                violations.push(Violation { step: i, kind, excess, detail });
                status = EntryStatus::Violation;
            } else if excess > 0.0 && status == EntryStatus::Ok && !kind.is_identity() {
                status = EntryStatus::Warn;
            }
        };
        let drift = (rec.delta_old - delta).abs();
        flag(
            ViolationKind::LogMismatch,
            drift,
            0.0,
            LOG_TOLERANCE,
            format!("logged delta {:e}, recomputed {:e}", rec.delta_old, delta),
        );
        flag(
            ViolationKind::LogRatio,
            delta,
            log_ratio_max,
            VIOLATION_TOLERANCE,
            format!("delta {delta:e} vs max log-ratio {log_ratio_max:e}"),
        );
        flag(
            ViolationKind::Taylor,
            log_ratio_max,
            taylor,
            VIOLATION_TOLERANCE,
            format!("max log-ratio {log_ratio_max:e} vs taylor {taylor:e}"),
        );
        flag(
            ViolationKind::GradientCap,
            taylor,
            bound,
            VIOLATION_TOLERANCE,
            format!("taylor {taylor:e} vs bound {bound:e} (|d| = {step_norm:e})"),
        );
        flag(
            ViolationKind::Theorem,
            rec.delta_old,
            bound,
            VIOLATION_TOLERANCE,
            format!("delta {:e} vs bound {bound:e}", rec.delta_old),
        );
        flag(
            ViolationKind::Composition,
            gap,
            0.0,
            COMPOSITION_TOLERANCE,
            format!("bound {bound:e} vs composed {composed:e}"),
        );
        if status == EntryStatus::Warn {
            warnings += 1;
        }
        min_slack = min_slack.min(slack);
        entries.push(StepBoundEntry {
            step: i,
            lr: rec.lr,
            batch_loss: rec.batch_loss,
            grad_norm: rec.grad_norm,
            delta_old: rec.delta_old,
            delta_recomputed: delta,
            log_ratio_max,
            step_norm,
            taylor_bound: taylor,
            bound,
            slack,
            status,
        });
        cached = Some((i + 1, p1, l1, lp1));
    }

    Ok(BoundReport {
        constants: constants.clone(),
        entries,
        violations,
        warnings,
        unchecked,
        min_slack,
        pinsker_max_ratio,
        composition_max_gap,
    })
}

/// Fills `bound` and `slack` on every step record.
pub fn annotate(run: &mut RunResult, constants: &BoundConstants) {
    for rec in &mut run.records {
        let b = constants.theorem_bound(rec.lr, rec.batch_loss);
        rec.bound = Some(b);
        rec.slack = Some(b - rec.delta_old);
    }
}
