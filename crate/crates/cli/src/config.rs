//! Flat `section.key = value` run configuration.

use crate::error::CliError;
use finch_core::lab::{GeneratorSpec, TaskFamily, TaskPair, TrainConfig};
use finch_core::numeric::fmt_f64;
use finch_core::scheduler::{FinchConfig, ScheduleSpec, DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_WARMUP_FRAC};
use finch_core::verify::ProbeConfig;
use finch_core::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    LinearSoftmax,
    Mlp2,
    SeqLinear,
}

impl ArchKind {
    fn name(self) -> &'static str {
        match self {
            ArchKind::LinearSoftmax => "linear_softmax",
            ArchKind::Mlp2 => "mlp2",
            ArchKind::SeqLinear => "seq_linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Finch,
    WarmupCosine,
    FixedSmall,
}

impl ScheduleKind {
    fn name(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Finch => "finch",
            ScheduleKind::WarmupCosine => "warmup_cosine",
            ScheduleKind::FixedSmall => "fixed_small",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            ScheduleKind::Constant | ScheduleKind::FixedSmall => &["lr"],
            ScheduleKind::Finch => &["eta_base", "eta_max", "epsilon", "alpha"],
            ScheduleKind::WarmupCosine => &["peak_lr", "warmup_frac"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub lr: f64,
    pub eta_base: f64,
    pub eta_max: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub peak_lr: f64,
    pub warmup_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub arch: ArchKind,
    pub hidden: usize,
    pub context: usize,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSection {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySection {
    pub enabled: bool,
    pub train_draw: usize,
    pub hessian_stride: usize,
    pub interior_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskPair,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub schedule: ScheduleSection,
    pub train: TrainConfig,
    pub verify: VerifySection,
    /// Empty means "derive from the output root".
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fin = finch_core::lab::reference_finch();
        Self {
            task: TaskPair::reference(),
            model: ModelSection { arch: ArchKind::LinearSoftmax, hidden: 16, context: 2, init_seed: 0 },
            pretrain: PretrainSection { steps: 500, lr: 1e-2, batch_size: 16, seed: 0 },
            schedule: ScheduleSection {
                kind: ScheduleKind::Constant,
                lr: 1e-2,
                eta_base: fin.eta_base,
                eta_max: fin.eta_max,
                epsilon: DEFAULT_EPSILON,
                alpha: DEFAULT_ALPHA,
                peak_lr: 1e-2,
                warmup_frac: DEFAULT_WARMUP_FRAC,
            },
            train: TrainConfig::default(),
            verify: VerifySection { enabled: false, train_draw: 256, hessian_stride: 10, interior_points: 3 },
            output_dir: String::new(),
        }
    }
}

struct Located<'a> {
    line: usize,
    value_col: usize,
    value: &'a str,
}

impl Located<'_> {
    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        CliError::Config { line: self.line, column: self.value_col, message: format!("{key}: {msg}") }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, CliError> {
        self.value.parse().map_err(|_| self.err(key, format!("expected {what}, got `{}`", self.value)))
    }

    fn real(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key, "a number")?;
        if !v.is_finite() {
            return Err(self.err(key, "must be finite"));
        }
        Ok(v)
    }

    fn nonneg(&self, key: &str) -> Result<f64, CliError> {
        let v = self.real(key)?;
        if v < 0.0 {
            return Err(self.err(key, format!("must be nonnegative, got {}", self.value)));
        }
        Ok(v)
    }

    fn positive(&self, key: &str) -> Result<f64, CliError> {
        let v = self.real(key)?;
        if v <= 0.0 {
            return Err(self.err(key, format!("must be positive, got {}", self.value)));
        }
        Ok(v)
    }

    fn count(&self, key: &str) -> Result<usize, CliError> {
        self.parse(key, "a nonnegative integer")
    }

    fn at_least_one(&self, key: &str) -> Result<usize, CliError> {
        let v = self.count(key)?;
        if v == 0 {
            return Err(self.err(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn seed(&self, key: &str) -> Result<u64, CliError> {
        self.parse(key, "an unsigned integer")
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.err(key, format!("expected true or false, got `{}`", self.value))),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(String, usize, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let key_col = content.len() - content.trim_start().len() + 1;
            let Some(eq) = content.find('=') else {
                return Err(CliError::Config {
                    line: line_no,
                    column: key_col,
                    message: "expected `key = value`".into(),
                });
            };
            let key = content[..eq].trim();
            let rest = &content[eq + 1..];
            let value = rest.trim();
            let value_col = eq + 2 + (rest.len() - rest.trim_start().len());
            if value.is_empty() {
                return Err(CliError::Config { line: line_no, column: value_col, message: format!("{key}: missing value") });
            }
            if let Some((_, l, _)) = seen.iter().find(|(k, _, _)| k == key) {
                return Err(CliError::Config {
                    line: line_no,
                    column: key_col,
                    message: format!("{key}: already set on line {l}"),
                });
            }
            let at = Located { line: line_no, value_col, value };
            if !cfg.set(key, &at)? {
                return Err(CliError::Config { line: line_no, column: key_col, message: format!("unknown key `{key}`") });
            }
            seen.push((key.to_string(), line_no, key_col));
        }
        for (key, line, column) in &seen {
            if let Some(name) = key.strip_prefix("schedule.") {
                if name != "kind" && !cfg.schedule.kind.keys().contains(&name) {
                    return Err(CliError::Config {
                        line: *line,
                        column: *column,
                        message: format!("{key} does not apply to schedule.kind = {}", cfg.schedule.kind.name()),
                    });
                }
            }
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Applies one key; `false` for unknown keys.
    fn set(&mut self, key: &str, at: &Located<'_>) -> Result<bool, CliError> {
        let t = &mut self.task;
        match key {
            "task.family" => {
                t.family = TaskFamily::parse(at.value).ok_or_else(|| at.err(key, format!("unknown family `{}`", at.value)))?
            }
            "task.features" => t.features = at.at_least_one(key)?,
            "task.classes" => t.classes = at.at_least_one(key)?,
            "task.seq_len" => t.seq_len = at.at_least_one(key)?,
            "task.world_seed" => t.world_seed = at.seed(key)?,
            "task.separation" => t.separation = at.nonneg(key)?,
            "task.noise" => t.noise = at.nonneg(key)?,
            "task.old_seed" => t.old.seed = at.seed(key)?,
            "task.old_shift" => t.old.shift = at.real(key)?,
            "task.new_seed" => t.new.seed = at.seed(key)?,
            "task.new_shift" => t.new.shift = at.real(key)?,
            "task.old_train_size" => t.old_train_size = at.at_least_one(key)?,
            "task.holdout_size" => t.holdout_size = at.at_least_one(key)?,
            "task.train_size" => t.train_size = at.at_least_one(key)?,
            "task.eval_size" => t.eval_size = at.at_least_one(key)?,
            "task.input_cap" => t.input_cap = at.positive(key)?,
            "model.arch" => {
                self.model.arch = match at.value {
                    "linear_softmax" => ArchKind::LinearSoftmax,
                    "mlp2" => ArchKind::Mlp2,
                    "seq_linear" => ArchKind::SeqLinear,
                    v => return Err(at.err(key, format!("unknown architecture `{v}`"))),
                }
            }
            "model.hidden" => self.model.hidden = at.at_least_one(key)?,
            "model.context" => self.model.context = at.at_least_one(key)?,
            "model.init_seed" => self.model.init_seed = at.seed(key)?,
            "pretrain.steps" => self.pretrain.steps = at.count(key)?,
            "pretrain.lr" => self.pretrain.lr = at.nonneg(key)?,
            "pretrain.batch_size" => self.pretrain.batch_size = at.at_least_one(key)?,
            "pretrain.seed" => self.pretrain.seed = at.seed(key)?,
            "schedule.kind" => {
                self.schedule.kind = match at.value {
                    "constant" => ScheduleKind::Constant,
                    "finch" => ScheduleKind::Finch,
                    "warmup_cosine" => ScheduleKind::WarmupCosine,
                    "fixed_small" => ScheduleKind::FixedSmall,
                    v => return Err(at.err(key, format!("unknown schedule `{v}`"))),
                }
            }
            "schedule.lr" => self.schedule.lr = at.nonneg(key)?,
            "schedule.eta_base" => self.schedule.eta_base = at.positive(key)?,
            "schedule.eta_max" => self.schedule.eta_max = at.positive(key)?,
            "schedule.epsilon" => self.schedule.epsilon = at.positive(key)?,
            "schedule.alpha" => {
                let a = at.real(key)?;
                if !(0.0..1.0).contains(&a) {
                    return Err(at.err(key, "must lie in [0, 1)"));
                }
                self.schedule.alpha = a;
            }
            "schedule.peak_lr" => self.schedule.peak_lr = at.positive(key)?,
            "schedule.warmup_frac" => {
                let f = at.real(key)?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(at.err(key, "must lie in [0, 1]"));
                }
                self.schedule.warmup_frac = f;
            }
            "train.steps" => self.train.steps = at.count(key)?,
            "train.batch_size" => self.train.batch_size = at.at_least_one(key)?,
            "train.grad_clip" => {
                self.train.grad_clip = if at.value == "none" { None } else { Some(at.positive(key)?) }
            }
            "train.l2_to_init" => self.train.l2_to_init = at.nonneg(key)?,
            "train.seed" => self.train.seed = at.seed(key)?,
            "train.eval_every" => self.train.eval_every = at.at_least_one(key)?,
            "train.checkpoint_stride" => self.train.checkpoint_stride = at.at_least_one(key)?,
            "verify.enabled" => self.verify.enabled = at.flag(key)?,
            "verify.train_draw" => self.verify.train_draw = at.count(key)?,
            "verify.hessian_stride" => self.verify.hessian_stride = at.at_least_one(key)?,
            "verify.interior_points" => self.verify.interior_points = at.count(key)?,
            "output.dir" => self.output_dir = at.value.to_string(),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Rebuilds derived fields and runs whole-config validation.
    pub fn finish(&mut self) -> Result<(), CliError> {
        self.train.schedule = self.schedule_spec();
        self.task.validate()?;
        self.task.check_arch(&self.arch())?;
        self.arch().validate()?;
        self.train.validate()?;
        self.pretrain_config().validate()?;
        Ok(())
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        let s = &self.schedule;
        match s.kind {
            ScheduleKind::Constant => ScheduleSpec::Constant { lr: s.lr },
            ScheduleKind::FixedSmall => ScheduleSpec::FixedSmall { lr: s.lr },
            ScheduleKind::Finch => ScheduleSpec::Finch(FinchConfig {
                eta_base: s.eta_base,
                eta_max: s.eta_max,
                epsilon: s.epsilon,
                alpha: s.alpha,
            }),
            ScheduleKind::WarmupCosine => ScheduleSpec::WarmupCosine {
                peak_lr: s.peak_lr,
                warmup_frac: s.warmup_frac,
                total_steps: self.train.steps as u64,
            },
        }
    }

    pub fn arch(&self) -> Architecture {
        let t = &self.task;
        match self.model.arch {
            ArchKind::LinearSoftmax => Architecture::LinearSoftmax { classes: t.classes, features: t.features },
            ArchKind::Mlp2 => Architecture::Mlp2 { classes: t.classes, features: t.features, hidden: self.model.hidden },
            ArchKind::SeqLinear => Architecture::SeqLinear { vocab: t.classes, context: self.model.context },
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: ScheduleSpec::Constant { lr: self.pretrain.lr },
            steps: self.pretrain.steps,
            batch_size: self.pretrain.batch_size,
            seed: self.pretrain.seed,
            ..TrainConfig::default()
        }
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            train_draw: self.verify.train_draw,
            hessian_stride: self.verify.hessian_stride,
            interior_points: self.verify.interior_points,
            ..ProbeConfig::default()
        }
    }

    /// Every key with its effective value; parses back to the same config.
    pub fn render(&self) -> String {
        let t = &self.task;
        let s = &self.schedule;
        let g = |v: &GeneratorSpec| (v.seed, fmt_f64(v.shift));
        let (old_seed, old_shift) = g(&t.old);
        let (new_seed, new_shift) = g(&t.new);
        let mut lines = vec![
            format!("task.family = {}", t.family.name()),
            format!("task.features = {}", t.features),
            format!("task.classes = {}", t.classes),
            format!("task.seq_len = {}", t.seq_len),
            format!("task.world_seed = {}", t.world_seed),
            format!("task.separation = {}", fmt_f64(t.separation)),
            format!("task.noise = {}", fmt_f64(t.noise)),
            format!("task.old_seed = {old_seed}"),
            format!("task.old_shift = {old_shift}"),
            format!("task.new_seed = {new_seed}"),
            format!("task.new_shift = {new_shift}"),
            format!("task.old_train_size = {}", t.old_train_size),
            format!("task.holdout_size = {}", t.holdout_size),
            format!("task.train_size = {}", t.train_size),
            format!("task.eval_size = {}", t.eval_size),
            format!("task.input_cap = {}", fmt_f64(t.input_cap)),
            format!("model.arch = {}", self.model.arch.name()),
            format!("model.hidden = {}", self.model.hidden),
            format!("model.context = {}", self.model.context),
            format!("model.init_seed = {}", self.model.init_seed),
            format!("pretrain.steps = {}", self.pretrain.steps),
            format!("pretrain.lr = {}", fmt_f64(self.pretrain.lr)),
            format!("pretrain.batch_size = {}", self.pretrain.batch_size),
            format!("pretrain.seed = {}", self.pretrain.seed),
            format!("schedule.kind = {}", s.kind.name()),
        ];
        for key in s.kind.keys() {
            let v = match *key {
                "lr" => s.lr,
                "eta_base" => s.eta_base,
                "eta_max" => s.eta_max,
                "epsilon" => s.epsilon,
                "alpha" => s.alpha,
                "peak_lr" => s.peak_lr,
                _ => s.warmup_frac,
            };
            lines.push(format!("schedule.{key} = {}", fmt_f64(v)));
        }
        let tr = &self.train;
        lines.extend([
            format!("train.steps = {}", tr.steps),
            format!("train.batch_size = {}", tr.batch_size),
            format!("train.grad_clip = {}", tr.grad_clip.map_or("none".to_string(), fmt_f64)),
            format!("train.l2_to_init = {}", fmt_f64(tr.l2_to_init)),
            format!("train.seed = {}", tr.seed),
            format!("train.eval_every = {}", tr.eval_every),
            format!("train.checkpoint_stride = {}", tr.checkpoint_stride),
            format!("verify.enabled = {}", self.verify.enabled),
            format!("verify.train_draw = {}", self.verify.train_draw),
            format!("verify.hessian_stride = {}", self.verify.hessian_stride),
            format!("verify.interior_points = {}", self.verify.interior_points),
        ]);
        if !self.output_dir.is_empty() {
            lines.push(format!("output.dir = {}", self.output_dir));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
