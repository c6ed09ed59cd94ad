//! Text renderings of a [`BoundReport`].

use super::step::BoundReport;
use crate::numeric::fmt_f64;

pub const REPORT_COLUMNS: [&str; 12] = [
    "step",
    "lr",
    "batch_loss",
    "grad_norm",
    "delta_old",
    "delta_recomputed",
    "log_ratio_max",
    "step_norm",
    "taylor_bound",
    "bound",
    "slack",
    "status",
];

pub fn write_report_csv(report: &BoundReport) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for e in &report.entries {
        let nums = [
            e.lr,
            e.batch_loss,
            e.grad_norm,
            e.delta_old,
            e.delta_recomputed,
            e.log_ratio_max,
            e.step_norm,
            e.taylor_bound,
            e.bound,
            e.slack,
        ];
        out.push_str(&e.step.to_string());
        for v in nums {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push(',');
        out.push_str(e.status.as_str());
        out.push('\n');
    }
    out
}

/// `key = value` lines, one violation per line at the end.
pub fn write_summary(report: &BoundReport) -> String {
    let c = &report.constants;
    let mut lines = vec![
        format!("result = {}", if report.passed() { "pass" } else { "fail" }),
        format!("steps_checked = {}", report.checked()),
        format!("steps_unchecked = {}", report.unchecked.len()),
        format!("violations = {}", report.violations.len()),
        format!("warnings = {}", report.warnings),
        format!("min_slack = {}", fmt_f64(report.min_slack)),
        format!("M_train = {}", fmt_f64(c.m_train)),
        format!("M_old = {}", fmt_f64(c.m_old)),
        format!("G = {}", fmt_f64(c.g)),
        format!("H = {}", fmt_f64(c.h)),
        format!("C1 = {}", fmt_f64(c.c1)),
        format!("C2 = {}", fmt_f64(c.c2)),
        format!("constants_reliable = {}", c.reliable),
        format!("probe = {}", c.probe.summary()),
        format!("grad_cap_max_ratio = {}", fmt_f64(report.pinsker_max_ratio)),
        format!("composition_max_gap = {}", fmt_f64(report.composition_max_gap)),
    ];
    for v in &report.violations {
        lines.push(format!("violation step={} kind={} excess={} {}", v.step, v.kind.as_str(), fmt_f64(v.excess), v.detail));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
