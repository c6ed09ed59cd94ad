//! Canonical text form of a [`ScheduleState`].
//!
//! ```text
//! finch-schedule v1
//! variant=finch
//! eta_base=2e-5
//! eta_max=5e-5
//! epsilon=1e-8
//! alpha=0.9
//! step=0
//! ema_count=0
//! ema_value=unset
//! last_lr=unset
//! ```
//!
//! Field order is fixed per variant. Floats use the shortest decimal that
//! parses back to the same bits, so a snapshot restores exactly.

use super::{EmaTracker, FinchConfig, ScheduleSpec, ScheduleState};
use crate::error::ScheduleError;
use crate::numeric::{fmt_f64, parse_f64};

pub const SCHEMA_VERSION: &str = "v1";
const MAGIC: &str = "finch-schedule";

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "unset".to_string())
}

pub(super) fn render(state: &ScheduleState) -> String {
    let mut out = format!("{MAGIC} {SCHEMA_VERSION}\nvariant={}\n", state.spec.name());
    match state.spec {
        ScheduleSpec::Finch(c) => {
            out += &format!(
                "eta_base={}\neta_max={}\nepsilon={}\nalpha={}\n",
                fmt_f64(c.eta_base),
                fmt_f64(c.eta_max),
                fmt_f64(c.epsilon),
                fmt_f64(c.alpha)
            );
        }
        ScheduleSpec::Constant { lr } | ScheduleSpec::FixedSmall { lr } => {
            out += &format!("lr={}\n", fmt_f64(lr));
        }
        ScheduleSpec::WarmupCosine {
            peak_lr,
            warmup_frac,
            total_steps,
        } => {
            out += &format!(
                "peak_lr={}\nwarmup_frac={}\ntotal_steps={}\n",
                fmt_f64(peak_lr),
                fmt_f64(warmup_frac),
                total_steps
            );
        }
    }
    out += &format!("step={}\n", state.step);
    if let Some(ema) = &state.ema {
        out += &format!("ema_count={}\nema_value={}\n", ema.count(), opt(ema.value()));
    }
    out += &format!("last_lr={}\n", opt(state.last_lr));
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn field(&mut self, key: &str) -> Result<(usize, &'a str), ScheduleError> {
        let (idx, line) = self.inner.next().ok_or(ScheduleError::Malformed {
            line: 0,
            reason: format!("truncated: expected `{key}`"),
        })?;
        let line_no = idx + 1;
        let (k, v) = line.split_once('=').ok_or_else(|| ScheduleError::Malformed {
            line: line_no,
            reason: format!("expected `{key}=<value>`"),
        })?;
        if k != key {
            return Err(ScheduleError::Malformed {
                line: line_no,
                reason: format!("expected key `{key}`, found `{k}`"),
            });
        }
        Ok((line_no, v))
    }

    fn float(&mut self, key: &str) -> Result<f64, ScheduleError> {
        let (line, v) = self.field(key)?;
        parse_f64(v).ok_or_else(|| ScheduleError::Malformed {
            line,
            reason: format!("`{key}` is not a number: `{v}`"),
        })
    }

    fn opt_float(&mut self, key: &str) -> Result<Option<f64>, ScheduleError> {
        let (line, v) = self.field(key)?;
        if v == "unset" {
            return Ok(None);
        }
        parse_f64(v).map(Some).ok_or_else(|| ScheduleError::Malformed {
            line,
            reason: format!("`{key}` is not a number: `{v}`"),
        })
    }

    fn int(&mut self, key: &str) -> Result<u64, ScheduleError> {
        let (line, v) = self.field(key)?;
        v.parse().map_err(|_| ScheduleError::Malformed {
            line,
            reason: format!("`{key}` is not an integer: `{v}`"),
        })
    }
}

pub(super) fn parse(text: &str) -> Result<ScheduleState, ScheduleError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    match lines.inner.next() {
        Some((_, h)) if h == format!("{MAGIC} {SCHEMA_VERSION}") => {}
        Some((_, h)) => {
            return Err(ScheduleError::Malformed {
                line: 1,
                reason: format!("unsupported header `{h}`"),
            })
        }
        None => {
            return Err(ScheduleError::Malformed {
                line: 0,
                reason: "empty input".into(),
            })
        }
    }
    let (vline, variant) = lines.field("variant")?;
    let spec = match variant {
        "finch" => ScheduleSpec::Finch(FinchConfig {
            eta_base: lines.float("eta_base")?,
            eta_max: lines.float("eta_max")?,
            epsilon: lines.float("epsilon")?,
            alpha: lines.float("alpha")?,
        }),
        "constant" => ScheduleSpec::Constant {
            lr: lines.float("lr")?,
        },
        "fixed_small" => ScheduleSpec::FixedSmall {
            lr: lines.float("lr")?,
        },
        "warmup_cosine" => ScheduleSpec::WarmupCosine {
            peak_lr: lines.float("peak_lr")?,
            warmup_frac: lines.float("warmup_frac")?,
            total_steps: lines.int("total_steps")?,
        },
        other => {
            return Err(ScheduleError::Malformed {
                line: vline,
                reason: format!("unknown variant `{other}`"),
            })
        }
    };
    spec.validate()?;
    let step = lines.int("step")?;
    let ema = match spec {
        ScheduleSpec::Finch(c) => {
            let count = lines.int("ema_count")?;
            let value = lines.opt_float("ema_value")?;
            if (count == 0) != value.is_none() {
                return Err(ScheduleError::Malformed {
                    line: 0,
                    reason: "ema_count and ema_value disagree".into(),
                });
            }
            Some(EmaTracker::from_parts(c.alpha, value, count))
        }
        _ => None,
    };
    let last_lr = lines.opt_float("last_lr")?;
    if let Some((idx, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(ScheduleError::Malformed {
            line: idx + 1,
            reason: format!("unexpected trailing content `{extra}`"),
        });
    }
    Ok(ScheduleState {
        spec,
        ema,
        step,
        last_lr,
    })
}
