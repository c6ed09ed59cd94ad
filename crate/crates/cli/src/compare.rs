//! Comparison tables with Pareto flags on (final new-task loss, forgetting).

use crate::artifacts::RunSummary;
use finch_core::numeric::fmt_f64;

pub const COMPARISON_COLUMNS: [&str; 8] = [
    "run",
    "schedule",
    "final_new_loss",
    "final_new_accuracy",
    "cumulative_forgetting",
    "min_slack",
    "clamp_active_fraction",
    "pareto",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub summary: RunSummary,
    pub pareto: bool,
}

fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// `true` for every point no other point dominates. Points with a NaN
/// coordinate are never on the front and never dominate.
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    let valid = |p: &(f64, f64)| !p.0.is_nan() && !p.1.is_nan();
    points
        .iter()
        .map(|p| valid(p) && !points.iter().any(|q| valid(q) && dominates(*q, *p)))
        .collect()
}

pub fn build_rows(runs: Vec<(String, RunSummary)>) -> Vec<ComparisonRow> {
    let points: Vec<_> = runs.iter().map(|(_, s)| (s.final_new_loss, s.cumulative_forgetting)).collect();
    runs.into_iter()
        .zip(pareto_flags(&points))
        .map(|((run, summary), pareto)| ComparisonRow { run, summary, pareto })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = COMPARISON_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let s = &r.summary;
        out += &format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&r.run),
            s.schedule,
            fmt_f64(s.final_new_loss),
            fmt_f64(s.final_new_accuracy),
            fmt_f64(s.cumulative_forgetting),
            s.min_slack.map(fmt_f64).unwrap_or_default(),
            fmt_f64(s.clamp_active_fraction),
            u8::from(r.pareto)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_stay_on_the_front() {
        assert_eq!(pareto_flags(&[(1.0, 2.0), (1.0, 2.0)]), vec![true, true]);
    }

    #[test]
    fn one_point_dominating_both_others() {
        assert_eq!(pareto_flags(&[(2.0, 2.0), (1.0, 1.0), (1.5, 3.0)]), vec![false, true, false]);
    }

    #[test]
    fn trade_off_keeps_both() {
        assert_eq!(pareto_flags(&[(1.0, 3.0), (3.0, 1.0), (3.0, 3.0)]), vec![true, true, false]);
        // equal on one axis, better on the other
        assert_eq!(pareto_flags(&[(1.0, 3.0), (1.0, 2.0)]), vec![false, true]);
    }

    #[test]
    fn nan_rows_are_excluded() {
        assert_eq!(pareto_flags(&[(f64::NAN, 0.0), (1.0, 1.0)]), vec![false, true]);
        assert!(pareto_flags(&[]).is_empty());
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
