//! Text formats for datasets and parameter checkpoints (schema `v1`).
//!
//! Labeled datasets are CSV with a header row `x0,..,x{d-1},q0,..,q{K-1}`:
//! one example per row, features first, then the K target probabilities.
//! Sequence datasets hold one sequence per line as whitespace-separated
//! token ids. Checkpoints start with `finch-checkpoint v1`, an architecture
//! line, then one `step <i> <theta...>` line per snapshot. Lines end in LF and
//! floats use the shortest round-trip decimal.

use super::{Architecture, LabeledExample, SequenceExample};
use crate::error::DataError;
use crate::numeric::{fmt_f64, parse_f64};

pub const CHECKPOINT_MAGIC: &str = "finch-checkpoint v1";

fn parse_err(line: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        reason: reason.into(),
    }
}

pub fn write_labeled_csv(examples: &[LabeledExample]) -> String {
    let (d, k) = examples
        .first()
        .map(|e| (e.x().len(), e.q().len()))
        .unwrap_or((0, 0));
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend((0..k).map(|j| format!("q{j}")));
    let mut out = header.join(",");
    out.push('\n');
    for e in examples {
        let row: Vec<String> = e.x().iter().chain(e.q()).map(|&v| fmt_f64(v)).collect();
        out += &row.join(",");
        out.push('\n');
    }
    out
}

pub fn read_labeled_csv(text: &str) -> Result<Vec<LabeledExample>, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.iter().take_while(|c| c.starts_with('x')).count();
    let k = cols.len() - d;
    for (j, c) in cols.iter().enumerate() {
        let want = if j < d { format!("x{j}") } else { format!("q{}", j - d) };
        if *c != want {
            return Err(parse_err(1, format!("header column {j}: expected `{want}`, found `{c}`")));
        }
    }
    if k < 2 {
        return Err(parse_err(1, "need at least two target columns"));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| parse_f64(f).ok_or_else(|| parse_err(idx + 1, format!("bad number `{f}`"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != d + k {
            return Err(parse_err(idx + 1, format!("expected {} fields, found {}", d + k, vals.len())));
        }
        let (x, q) = vals.split_at(d);
        out.push(LabeledExample::new(x.to_vec(), q.to_vec()).map_err(|e| parse_err(idx + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_sequences(seqs: &[SequenceExample]) -> String {
    let mut out = String::new();
    for s in seqs {
        let toks: Vec<String> = s.tokens().iter().map(|t| t.to_string()).collect();
        out += &toks.join(" ");
        out.push('\n');
    }
    out
}

pub fn read_sequences(text: &str, vocab: usize) -> Result<Vec<SequenceExample>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(idx + 1, format!("bad token `{t}`"))))
            .collect::<Result<_, _>>()?;
        out.push(SequenceExample::new(toks, vocab).map_err(|e| parse_err(idx + 1, e.to_string()))?);
    }
    Ok(out)
}

impl Architecture {
    /// Single-line `key=value` description, e.g. `arch=mlp2 classes=5 features=20 hidden=16`.
    pub fn describe(&self) -> String {
        match *self {
            Architecture::LinearSoftmax { classes, features } => {
                format!("arch=linear_softmax classes={classes} features={features}")
            }
            Architecture::Mlp2 {
                classes,
                features,
                hidden,
            } => format!("arch=mlp2 classes={classes} features={features} hidden={hidden}"),
            Architecture::SeqLinear { vocab, context } => {
                format!("arch=seq_linear vocab={vocab} context={context}")
            }
        }
    }

    pub fn parse_description(line: &str) -> Result<Self, DataError> {
        let mut kv = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| parse_err(0, format!("expected key=value, found `{tok}`")))?;
            kv.insert(k, v);
        }
        let num = |key: &str| -> Result<usize, DataError> {
            kv.get(key)
                .ok_or_else(|| parse_err(0, format!("missing `{key}`")))?
                .parse()
                .map_err(|_| parse_err(0, format!("`{key}` is not an integer")))
        };
        let arch = match kv.get("arch").copied() {
            Some("linear_softmax") => Architecture::LinearSoftmax {
                classes: num("classes")?,
                features: num("features")?,
            },
            Some("mlp2") => Architecture::Mlp2 {
                classes: num("classes")?,
                features: num("features")?,
                hidden: num("hidden")?,
            },
            Some("seq_linear") => Architecture::SeqLinear {
                vocab: num("vocab")?,
                context: num("context")?,
            },
            other => return Err(parse_err(0, format!("unknown architecture {other:?}"))),
        };
        arch.validate().map_err(|e| parse_err(0, e.to_string()))?;
        Ok(arch)
    }
}

pub fn write_checkpoints<'a>(arch: &Architecture, snapshots: impl IntoIterator<Item = (usize, &'a [f64])>) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC}\n{}\n", arch.describe());
    for (step, theta) in snapshots {
        out += &format!("step {step}");
        for &v in theta {
            out.push(' ');
            out += &fmt_f64(v);
        }
        out.push('\n');
    }
    out
}

pub type Snapshots = Vec<(usize, Vec<f64>)>;

pub fn read_checkpoints(text: &str) -> Result<(Architecture, Snapshots), DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CHECKPOINT_MAGIC => {}
        _ => return Err(parse_err(1, format!("expected `{CHECKPOINT_MAGIC}`"))),
    }
    let (_, arch_line) = lines.next().ok_or_else(|| parse_err(2, "missing architecture line"))?;
    let arch = Architecture::parse_description(arch_line).map_err(|e| match e {
        DataError::Parse { reason, .. } => parse_err(2, reason),
        other => other,
    })?;
    let mut snaps = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(' ');
        if it.next() != Some("step") {
            return Err(parse_err(idx + 1, "expected `step <i> ...`"));
        }
        let step: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(idx + 1, "bad step index"))?;
        let theta: Vec<f64> = it
            .map(|f| parse_f64(f).ok_or_else(|| parse_err(idx + 1, format!("bad number `{f}`"))))
            .collect::<Result<_, _>>()?;
        if theta.len() != arch.param_dim() {
            return Err(parse_err(
                idx + 1,
                format!("expected {} parameters, found {}", arch.param_dim(), theta.len()),
            ));
        }
        snaps.push((step, theta));
    }
    Ok((arch, snaps))
}
