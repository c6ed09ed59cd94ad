//! Under the finch rule the leading bound term is pinned near `C1 eta_base`
//! whenever the cap is inactive.

use super::constants::BoundConstants;
use crate::error::VerifyError;
use crate::lab::RunResult;
use crate::scheduler::ScheduleSpec;

/// Unclamped fraction below which the check is inconclusive.
pub const MIN_UNCLAMPED_FRACTION: f64 = 0.9;
/// Allowed max/min spread of the leading term over unclamped steps.
pub const LEADING_TERM_SPREAD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CorollaryReport {
    pub unclamped_fraction: f64,
    pub inconclusive: bool,
    /// max/min of `C1 lr sqrt(L_batch)` over unclamped steps.
    pub leading_spread: f64,
    /// max/min of `C1 lr sqrt(ema + eps)` over unclamped steps.
    pub ema_spread: f64,
    /// `C1 eta_base`, the value the ema-level term is pinned to.
    pub pinned_value: f64,
    /// Sum of `C1 lr sqrt(L_batch)` over unclamped steps.
    pub leading_sum: f64,
    pub bound_sum: f64,
    pub cumulative_forgetting: f64,
    pub total_slack: f64,
}

impl CorollaryReport {
    pub fn spread_ok(&self) -> bool {
        self.leading_spread <= LEADING_TERM_SPREAD
    }

    pub fn cumulative_ok(&self) -> bool {
        self.total_slack >= 0.0
    }

    pub fn passed(&self) -> bool {
        !self.inconclusive && self.spread_ok() && self.cumulative_ok()
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        1.0
    } else if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn check_corollary(run: &RunResult, constants: &BoundConstants) -> Result<CorollaryReport, VerifyError> {
    let ScheduleSpec::Finch(cfg) = run.config.schedule else {
        return Err(VerifyError::Precondition(format!(
            "corollary applies to the finch schedule, run used {}",
            run.config.schedule.name()
        )));
    };
    let unclamped: Vec<_> = run.records.iter().filter(|r| !cfg.is_clamped(r.ema_loss)).collect();
    let leading: Vec<f64> = unclamped.iter().map(|r| constants.c1 * r.lr * r.batch_loss.sqrt()).collect();
    let ema_level: Vec<f64> = unclamped
        .iter()
        .map(|r| constants.c1 * r.lr * (r.ema_loss + cfg.epsilon).sqrt())
        .collect();
    let unclamped_fraction = if run.records.is_empty() {
        0.0
    } else {
        unclamped.len() as f64 / run.records.len() as f64
    };
    let bound_sum: f64 = run
        .records
        .iter()
        .map(|r| constants.theorem_bound(r.lr, r.batch_loss))
        .sum();
    Ok(CorollaryReport {
        unclamped_fraction,
        inconclusive: unclamped_fraction < MIN_UNCLAMPED_FRACTION,
        leading_spread: spread(&leading),
        ema_spread: spread(&ema_level),
        pinned_value: constants.c1 * cfg.eta_base,
        leading_sum: leading.iter().sum(),
        bound_sum,
        cumulative_forgetting: run.cumulative_forgetting,
        total_slack: bound_sum - run.cumulative_forgetting,
    })
}
