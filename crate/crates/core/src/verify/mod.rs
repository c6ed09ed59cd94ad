//! Empirical certification of the per-step forgetting bound.

mod constants;
mod corollary;
mod gradcap;
mod pinsker;
mod report;
mod step;

pub use constants::{
    estimate_constants, BoundConstants, ProbeConfig, ProbeDescription, MAX_CHECKPOINT_STRIDE,
    MAX_NONCONVERGED_FRACTION,
};
pub use corollary::{check_corollary, CorollaryReport, LEADING_TERM_SPREAD, MIN_UNCLAMPED_FRACTION};
pub use gradcap::{check_grad_cap, grad_cap_check, grad_cap_check_with, GradCapCheck, GradCapReport};
pub use pinsker::{check_pinsker_chain, PinskerChain};
pub use report::{write_report_csv, write_summary, REPORT_COLUMNS};
pub use step::{
    annotate, check_step_bound, BoundReport, EntryStatus, StepBoundEntry, Violation, ViolationKind,
    COMPOSITION_TOLERANCE, LOG_TOLERANCE, VIOLATION_TOLERANCE,
};

use crate::error::VerifyError;
use crate::lab::{RunResult, TaskData};

/// Estimates constants with `probe` and checks every step.
pub fn verify_run(run: &RunResult, data: &TaskData, probe: &ProbeConfig) -> Result<BoundReport, VerifyError> {
    let constants = estimate_constants(run, data, probe)?;
    check_step_bound(run, data, &constants)
}
