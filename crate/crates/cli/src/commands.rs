use crate::artifacts::{self, RunSummary, REPORT_SUMMARY_FILE, SUMMARY_FILE};
use crate::compare::{build_rows, pareto_flags, write_comparison_csv, ComparisonRow};
use crate::config::{RunConfig, ScheduleKind};
use crate::error::CliError;
use finch_core::lab::{finetune, pretrain, TaskData};
use finch_core::numeric::{fmt_f64, parse_f64};
use finch_core::scheduler::LR_GRID;
use finch_core::verify::{annotate, check_corollary, check_grad_cap, check_step_bound, estimate_constants, BoundReport};
use finch_core::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "FINCH_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "finch-runs";

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::parse(&artifacts::read(path)?)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// `--out`, then `output.dir`, then `$FINCH_OUT_ROOT/<config stem><suffix>`.
pub fn output_dir(out: Option<&Path>, cfg: &RunConfig, config_path: &Path, suffix: &str) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if !cfg.output_dir.is_empty() {
        return PathBuf::from(&cfg.output_dir);
    }
    let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
    let stem = config_path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    root.join(format!("{stem}{suffix}"))
}

pub fn prepare(cfg: &RunConfig) -> Result<(TaskData, ModelParams), CliError> {
    let data = cfg.task.materialize()?;
    let init = ModelParams::init(cfg.arch(), cfg.model.init_seed);
    let pre = pretrain(&init, &data, &cfg.pretrain_config())?;
    Ok((data, pre))
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub report: Option<BoundReport>,
}

fn execute(cfg: &RunConfig, data: &TaskData, pre: &ModelParams, dir: &Path) -> Result<RunOutcome, CliError> {
    let mut run = finetune(pre, data, &cfg.train)?;
    let report = if cfg.verify.enabled {
        let constants = estimate_constants(&run, data, &cfg.probe())?;
        annotate(&mut run, &constants);
        Some(check_step_bound(&run, data, &constants)?)
    } else {
        None
    };
    let summary = artifacts::write_run(dir, cfg, data, &run, report.as_ref())?;
    Ok(RunOutcome { dir: dir.to_path_buf(), summary, report })
}

fn violations_error(report: &BoundReport) -> CliError {
    let listed: Vec<String> = report
        .violations
        .iter()
        .take(20)
        .map(|v| format!("  step {} {}: {}", v.step, v.kind.as_str(), v.detail))
        .collect();
    CliError::Failed(format!(
        "{} bound violation(s), min slack {}\n{}",
        report.violations.len(),
        fmt_f64(report.min_slack),
        listed.join("\n")
    ))
}

pub fn cmd_run(config: &Path, out: Option<&Path>, seed: Option<u64>, overwrite: bool) -> Result<RunOutcome, CliError> {
    let cfg = load_config(config, seed)?;
    let dir = output_dir(out, &cfg, config, "");
    artifacts::prepare_dir(&dir, overwrite)?;
    let (data, pre) = prepare(&cfg)?;
    let outcome = execute(&cfg, &data, &pre, &dir)?;
    if let Some(r) = outcome.report.as_ref().filter(|r| !r.passed()) {
        return Err(violations_error(r));
    }
    Ok(outcome)
}

pub struct VerifyOutcome {
    pub report: BoundReport,
    pub summary: String,
}

pub fn cmd_verify(dir: &Path) -> Result<VerifyOutcome, CliError> {
    let (cfg, data, run) = artifacts::load_run(dir)?;
    let constants = estimate_constants(&run, &data, &cfg.probe())?;
    let report = check_step_bound(&run, &data, &constants)?;
    let caps = check_grad_cap(&run, &data, &constants)?;
    let mut summary = finch_core::verify::write_summary(&report);
    summary += &format!(
        "grad_cap_steps = {}\ngrad_cap_failures = {}\ngrad_norm_log_mismatches = {}\n",
        caps.entries.len(),
        caps.failures.len(),
        caps.log_mismatches.len()
    );
    let mut failed = !report.passed() || !caps.passed();
    if cfg.schedule.kind == ScheduleKind::Finch {
        let c = check_corollary(&run, &constants)?;
        summary += &format!(
            "corollary_unclamped_fraction = {}\ncorollary_inconclusive = {}\ncorollary_leading_spread = {}\n\
             corollary_ema_spread = {}\ncorollary_bound_sum = {}\ncorollary_total_slack = {}\n",
            fmt_f64(c.unclamped_fraction),
            c.inconclusive,
            fmt_f64(c.leading_spread),
            fmt_f64(c.ema_spread),
            fmt_f64(c.bound_sum),
            fmt_f64(c.total_slack)
        );
        failed |= !c.cumulative_ok();
    }
    artifacts::write(&dir.join(artifacts::REPORT_FILE), &finch_core::verify::write_report_csv(&report))?;
    artifacts::write(&dir.join(REPORT_SUMMARY_FILE), &summary)?;
    if failed {
        let mut e = violations_error(&report);
        if let CliError::Failed(msg) = &mut e {
            if !caps.passed() {
                msg.push_str(&format!(
                    "\ngradient cap: {} failure(s), {} logged-norm mismatch(es)",
                    caps.failures.len(),
                    caps.log_mismatches.len()
                ));
            }
        }
        return Err(e);
    }
    Ok(VerifyOutcome { report, summary })
}

pub struct GradcheckOutcome {
    pub cases: usize,
    pub max_rel_error: f64,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Central-difference check of the analytic gradient on random parameters
/// and batches drawn from the configured task.
pub fn cmd_gradcheck(config: &Path, cases: usize, seed: Option<u64>) -> Result<GradcheckOutcome, CliError> {
    let cfg = load_config(config, None)?;
    let data = cfg.task.materialize()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let mut p = ModelParams::init(cfg.arch(), rng.random());
        let scale = rng.random_range(0.1..3.0);
        p.theta_mut().iter_mut().for_each(|t| *t *= scale);
        let idx: Vec<usize> = (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..data.new_train.len())).collect();
        let batch = data.new_train.batch(&idx);
        let g = p.grad_ce(&batch)?;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (j, &gj) in g.iter().enumerate() {
            let mut plus = p.clone();
            plus.theta_mut()[j] += h;
            let mut minus = p.clone();
            minus.theta_mut()[j] -= h;
            let fd = (plus.ce_loss(&batch)? - minus.ce_loss(&batch)?) / (2.0 * h);
            num += (fd - gj).powi(2);
            den += fd.powi(2).max(gj.powi(2));
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-12));
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(CliError::Failed(format!(
            "max relative error {worst:e} over {cases} cases exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(GradcheckOutcome { cases, max_rel_error: worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKey {
    EtaBase,
    Lr,
    BatchSize,
}

impl GridKey {
    fn name(self) -> &'static str {
        match self {
            GridKey::EtaBase => "eta_base",
            GridKey::Lr => "lr",
            GridKey::BatchSize => "batch_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: GridKey,
    pub values: Vec<f64>,
}

/// `key=v1,v2,...` with key one of `eta_base`, `lr`, `batch_size`.
pub fn parse_grid(spec: &str) -> Result<GridAxis, CliError> {
    let bad = |m: String| CliError::Input(format!("grid `{spec}`: {m}"));
    let (key, values) = spec.split_once('=').ok_or_else(|| bad("expected key=v1,v2,...".into()))?;
    let key = match key.trim() {
        "eta_base" => GridKey::EtaBase,
        "lr" => GridKey::Lr,
        "batch_size" => GridKey::BatchSize,
        other => return Err(bad(format!("unknown grid key `{other}` (eta_base, lr, batch_size)"))),
    };
    let values = values
        .split(',')
        .map(|v| parse_f64(v).filter(|x| x.is_finite()).ok_or_else(|| bad(format!("bad value `{}`", v.trim()))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(bad("no values".into()));
    }
    Ok(GridAxis { key, values })
}

fn default_grid(cfg: &RunConfig) -> GridAxis {
    let key = if cfg.schedule.kind == ScheduleKind::Finch { GridKey::EtaBase } else { GridKey::Lr };
    GridAxis { key, values: LR_GRID.to_vec() }
}

/// Cartesian product in axis order, duplicates removed (first kept).
pub fn grid_points(axes: &[GridAxis]) -> (Vec<Vec<(GridKey, f64)>>, usize) {
    let mut points: Vec<Vec<(GridKey, f64)>> = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q: Vec<(GridKey, f64)> = p.iter().copied().filter(|(k, _)| *k != axis.key).collect();
                    q.push((axis.key, v));
                    q
                })
            })
            .collect();
    }
    let mut unique: Vec<Vec<(GridKey, f64)>> = Vec::new();
    let mut dropped = 0;
    for p in points {
        let mut canon = p.clone();
        canon.sort_by_key(|(k, _)| *k as u8);
        if unique.iter().any(|u| {
            let mut c = u.clone();
            c.sort_by_key(|(k, _)| *k as u8);
            c == canon
        }) {
            dropped += 1;
        } else {
            unique.push(p);
        }
    }
    (unique, dropped)
}

fn apply_point(base: &RunConfig, point: &[(GridKey, f64)]) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    for &(key, v) in point {
        match key {
            GridKey::EtaBase => {
                if cfg.schedule.kind != ScheduleKind::Finch {
                    return Err(CliError::Input("eta_base applies to the finch schedule only".into()));
                }
                cfg.schedule.eta_base = v;
            }
            GridKey::Lr => match cfg.schedule.kind {
                ScheduleKind::Constant | ScheduleKind::FixedSmall => cfg.schedule.lr = v,
                ScheduleKind::WarmupCosine => cfg.schedule.peak_lr = v,
                ScheduleKind::Finch => return Err(CliError::Input("use eta_base to sweep the finch schedule".into())),
            },
            GridKey::BatchSize => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(CliError::Input(format!("batch_size must be a positive integer, got {v}")));
                }
                cfg.train.batch_size = v as usize;
            }
        }
    }
    cfg.finish()?;
    Ok(cfg)
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "point",
    "params",
    "status",
    "final_new_loss",
    "final_new_accuracy",
    "cumulative_forgetting",
    "min_slack",
    "clamp_active_fraction",
    "pareto",
    "dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    pub params: String,
    /// `ok`, or the error that stopped this point.
    pub status: String,
    pub summary: Option<RunSummary>,
    pub pareto: bool,
    pub dir: String,
}

pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub duplicates: usize,
}

fn render_params(point: &[(GridKey, f64)]) -> String {
    point.iter().map(|(k, v)| format!("{}={}", k.name(), fmt_f64(*v))).collect::<Vec<_>>().join(";")
}

pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = SWEEP_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let m = r.summary.as_ref();
        let num = |f: fn(&RunSummary) -> f64| m.map(|s| fmt_f64(f(s))).unwrap_or_default();
        out += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.point,
            r.params,
            r.status.replace([',', '\n'], " "),
            num(|s| s.final_new_loss),
            num(|s| s.final_new_accuracy),
            num(|s| s.cumulative_forgetting),
            m.and_then(|s| s.min_slack).map(fmt_f64).unwrap_or_default(),
            num(|s| s.clamp_active_fraction),
            u8::from(r.pareto),
            r.dir
        );
    }
    out
}

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

/// One run per grid point under `<dir>/point-NNN`, merged into a summary
/// sorted by final new-task loss (failed points last, ties by point index).
pub fn cmd_sweep(config: &Path, grids: &[String], out: Option<&Path>, seed: Option<u64>, overwrite: bool) -> Result<SweepOutcome, CliError> {
    let base = load_config(config, seed)?;
    let axes = if grids.is_empty() {
        vec![default_grid(&base)]
    } else {
        grids.iter().map(|g| parse_grid(g)).collect::<Result<Vec<_>, _>>()?
    };
    let (points, duplicates) = grid_points(&axes);
    let dir = output_dir(out, &base, config, "-sweep");
    if std::fs::read_dir(&dir).is_ok_and(|mut d| d.next().is_some()) && !overwrite {
        return Err(CliError::Input(format!("{} is not empty; pass --overwrite to replace its artifacts", dir.display())));
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let (data, pre) = prepare(&base)?;

    let mut rows = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let name = format!("point-{i:03}");
        let sub = dir.join(&name);
        let result = apply_point(&base, point).and_then(|cfg| {
            artifacts::prepare_dir(&sub, overwrite)?;
            execute(&cfg, &data, &pre, &sub)
        });
        let (status, summary) = match result {
            Ok(o) => {
                let status = match &o.report {
                    Some(r) if !r.passed() => format!("violations: {}", r.violations.len()),
                    _ => "ok".to_string(),
                };
                (status, Some(o.summary))
            }
            Err(e) => (format!("error: {e}"), None),
        };
        rows.push(SweepRow { point: i, params: render_params(point), status, summary, pareto: false, dir: name });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| r.summary.as_ref().map_or((f64::NAN, f64::NAN), |s| (s.final_new_loss, s.cumulative_forgetting)))
        .collect();
    for (r, p) in rows.iter_mut().zip(pareto_flags(&pts)) {
        r.pareto = p;
    }
    let key = |r: &SweepRow| r.summary.as_ref().map_or(f64::INFINITY, |s| s.final_new_loss);
    rows.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.point.cmp(&b.point)));
    artifacts::write(&dir.join(SWEEP_SUMMARY_FILE), &write_sweep_csv(&rows))?;
    Ok(SweepOutcome { dir, rows, duplicates })
}

pub const COMPARISON_FILE: &str = "comparison.csv";

pub fn cmd_compare(dirs: &[PathBuf], out: Option<&Path>) -> Result<Vec<ComparisonRow>, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::Input("compare needs at least two run directories".into()));
    }
    let mut runs = Vec::with_capacity(dirs.len());
    for d in dirs {
        let path = d.join(SUMMARY_FILE);
        let mut s = RunSummary::parse(&artifacts::read(&path)?, &path)?;
        let report = d.join(REPORT_SUMMARY_FILE);
        if report.exists() {
            let text = artifacts::read(&report)?;
            if let Some(v) = text.lines().find_map(|l| l.strip_prefix("min_slack = ")) {
                s.min_slack = parse_f64(v);
            }
        }
        runs.push((d.display().to_string(), s));
    }
    let task = &runs[0].1.task;
    if let Some((d, s)) = runs.iter().find(|(_, s)| &s.task != task) {
        return Err(CliError::Input(format!(
            "{d} was run on task {} but {} was run on {task}; refusing to compare",
            s.task,
            runs[0].0
        )));
    }
    let rows = build_rows(runs);
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| CliError::io(o, e))?;
        artifacts::write(&o.join(COMPARISON_FILE), &write_comparison_csv(&rows))?;
    }
    Ok(rows)
}
