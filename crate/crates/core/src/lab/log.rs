//! Per-step and evaluation CSV logs.
//!
//! `steps.csv` columns, in order:
//! `step,lr,batch_loss,ema_loss,grad_norm,clipped,old_loss,delta_old,bound,slack`.
//! `clipped` is `0`/`1`; `bound` and `slack` are empty until a verifier
//! annotates the run. Floats use the shortest round-trip decimal and lines
//! end in LF.

use super::train::{EvalPoint, StepRecord};
use crate::error::DataError;
use crate::numeric::{fmt_f64, parse_f64};

pub const STEP_COLUMNS: [&str; 10] = [
    "step", "lr", "batch_loss", "ema_loss", "grad_norm", "clipped", "old_loss", "delta_old", "bound", "slack",
];

pub const EVAL_COLUMNS: [&str; 5] = ["step", "new_loss", "new_accuracy", "old_loss", "old_accuracy"];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_steps_csv(records: &[StepRecord]) -> String {
    let mut out = STEP_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            fmt_f64(r.lr),
            fmt_f64(r.batch_loss),
            fmt_f64(r.ema_loss),
            fmt_f64(r.grad_norm),
            r.clipped as u8,
            fmt_f64(r.old_loss),
            fmt_f64(r.delta_old),
            opt(r.bound),
            opt(r.slack),
        );
    }
    out
}

fn perr(line: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        reason: reason.into(),
    }
}

pub fn read_steps_csv(text: &str) -> Result<Vec<StepRecord>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == STEP_COLUMNS.join(",") => {}
        _ => return Err(perr(1, "unexpected step-log header")),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != STEP_COLUMNS.len() {
            return Err(perr(ln, format!("expected {} fields", STEP_COLUMNS.len())));
        }
        let num = |i: usize| parse_f64(f[i]).ok_or_else(|| perr(ln, format!("bad `{}`", STEP_COLUMNS[i])));
        let opt_num = |i: usize| if f[i].is_empty() { Ok(None) } else { num(i).map(Some) };
        out.push(StepRecord {
            step: f[0].parse().map_err(|_| perr(ln, "bad step"))?,
            lr: num(1)?,
            batch_loss: num(2)?,
            ema_loss: num(3)?,
            grad_norm: num(4)?,
            clipped: match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(perr(ln, "bad `clipped`")),
            },
            old_loss: num(6)?,
            delta_old: num(7)?,
            bound: opt_num(8)?,
            slack: opt_num(9)?,
        });
    }
    Ok(out)
}

pub fn write_eval_csv(points: &[EvalPoint]) -> String {
    let mut out = EVAL_COLUMNS.join(",");
    out.push('\n');
    for p in points {
        out += &format!(
            "{},{},{},{},{}\n",
            p.step,
            fmt_f64(p.new_loss),
            fmt_f64(p.new_accuracy),
            fmt_f64(p.old_loss),
            fmt_f64(p.old_accuracy)
        );
    }
    out
}

pub fn read_eval_csv(text: &str) -> Result<Vec<EvalPoint>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == EVAL_COLUMNS.join(",") => {}
        _ => return Err(perr(1, "unexpected eval-log header")),
    }
    lines
        .map(|(idx, line)| {
            let ln = idx + 1;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != EVAL_COLUMNS.len() {
                return Err(perr(ln, "wrong field count"));
            }
            let num = |i: usize| parse_f64(f[i]).ok_or_else(|| perr(ln, "bad number"));
            Ok(EvalPoint {
                step: f[0].parse().map_err(|_| perr(ln, "bad step"))?,
                new_loss: num(1)?,
                new_accuracy: num(2)?,
                old_loss: num(3)?,
                old_accuracy: num(4)?,
            })
        })
        .collect()
}
