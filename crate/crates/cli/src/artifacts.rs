//! Run-directory layout: writing artifacts and loading them back.

use crate::config::RunConfig;
use crate::error::CliError;
use finch_core::lab::log::{read_eval_csv, read_steps_csv, write_eval_csv, write_steps_csv};
use finch_core::lab::{BatchSampler, RunResult, TaskData};
use finch_core::model::io::{read_checkpoints, read_labeled_csv, read_sequences, write_checkpoints, write_labeled_csv, write_sequences};
use finch_core::numeric::{fmt_f64, parse_f64};
use finch_core::verify::{write_report_csv, write_summary, BoundReport};
use finch_core::{Dataset, ScheduleState};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const CONFIG_FILE: &str = "effective_config.txt";
pub const STEPS_FILE: &str = "steps.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINTS_FILE: &str = "checkpoints.txt";
pub const SCHEDULE_FILE: &str = "schedule_state.txt";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const REPORT_FILE: &str = "bound_report.csv";
pub const REPORT_SUMMARY_FILE: &str = "bound_summary.txt";
pub const DATA_DIR: &str = "data";

const ARTIFACTS: [&str; 8] = [
    CONFIG_FILE,
    STEPS_FILE,
    EVAL_FILE,
    CHECKPOINTS_FILE,
    SCHEDULE_FILE,
    SUMMARY_FILE,
    REPORT_FILE,
    REPORT_SUMMARY_FILE,
];
const SPLITS: [&str; 4] = ["old_train", "old_holdout", "new_train", "new_eval"];

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Creates `dir`, refusing a non-empty one unless `overwrite` is set. With
/// `overwrite`, only files this tool writes are removed.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() {
            if !overwrite {
                return Err(CliError::Input(format!(
                    "{} is not empty; pass --overwrite to replace its artifacts",
                    dir.display()
                )));
            }
            for name in ARTIFACTS {
                let p = dir.join(name);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
                }
            }
            let data = dir.join(DATA_DIR);
            for split in SPLITS {
                for ext in ["csv", "txt"] {
                    let p = data.join(format!("{split}.{ext}"));
                    if p.exists() {
                        fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
                    }
                }
            }
        }
    }
    fs::create_dir_all(dir.join(DATA_DIR)).map_err(|e| CliError::io(dir, e))
}

fn split_path(dir: &Path, split: &str, sequence: bool) -> PathBuf {
    dir.join(DATA_DIR).join(format!("{split}.{}", if sequence { "txt" } else { "csv" }))
}

fn splits(data: &TaskData) -> [&Dataset; 4] {
    [&data.old_train, &data.old_holdout, &data.new_train, &data.new_eval]
}

pub fn write_data(dir: &Path, data: &TaskData) -> Result<(), CliError> {
    for (name, set) in SPLITS.iter().zip(splits(data)) {
        let (text, seq) = match set {
            Dataset::Labeled(v) => (write_labeled_csv(v), false),
            Dataset::Sequence(v) => (write_sequences(v), true),
        };
        write(&split_path(dir, name, seq), &text)?;
    }
    Ok(())
}

pub fn read_data(dir: &Path, cfg: &RunConfig) -> Result<TaskData, CliError> {
    let seq = cfg.task.family.is_sequence();
    let mut sets = Vec::with_capacity(4);
    for name in SPLITS {
        let path = split_path(dir, name, seq);
        let text = read(&path)?;
        let set = if seq {
            read_sequences(&text, cfg.task.classes).map(Dataset::Sequence)
        } else {
            read_labeled_csv(&text).map(Dataset::Labeled)
        };
        sets.push(set.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?);
    }
    let mut it = sets.into_iter();
    let mut next = || it.next().expect("four splits");
    Ok(TaskData { old_train: next(), old_holdout: next(), new_train: next(), new_eval: next() })
}

/// Headline numbers of one run, stored as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub task: String,
    pub schedule: String,
    pub steps: usize,
    pub final_new_loss: f64,
    pub final_new_accuracy: f64,
    pub initial_old_loss: f64,
    pub final_old_loss: f64,
    pub final_old_accuracy: f64,
    pub cumulative_forgetting: f64,
    pub clamp_active_fraction: f64,
    pub min_slack: Option<f64>,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, run: &RunResult, report: Option<&BoundReport>) -> Self {
        let last = run.final_eval();
        Self {
            task: cfg.task.fingerprint(),
            schedule: cfg.train.schedule.name().to_string(),
            steps: run.records.len(),
            final_new_loss: last.new_loss,
            final_new_accuracy: last.new_accuracy,
            initial_old_loss: run.initial_old_loss,
            final_old_loss: run.final_old_loss,
            final_old_accuracy: last.old_accuracy,
            cumulative_forgetting: run.cumulative_forgetting,
            clamp_active_fraction: run.clamp_active_fraction(),
            min_slack: report.map(|r| r.min_slack),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "task = {}\nschedule = {}\nsteps = {}\nfinal_new_loss = {}\nfinal_new_accuracy = {}\n\
             initial_old_loss = {}\nfinal_old_loss = {}\nfinal_old_accuracy = {}\n\
             cumulative_forgetting = {}\nclamp_active_fraction = {}\n",
            self.task,
            self.schedule,
            self.steps,
            fmt_f64(self.final_new_loss),
            fmt_f64(self.final_new_accuracy),
            fmt_f64(self.initial_old_loss),
            fmt_f64(self.final_old_loss),
            fmt_f64(self.final_old_accuracy),
            fmt_f64(self.cumulative_forgetting),
            fmt_f64(self.clamp_active_fraction),
        );
        if let Some(s) = self.min_slack {
            out += &format!("min_slack = {}\n", fmt_f64(s));
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Input(format!("{}: {m}", origin.display()));
        let get = |key: &str| -> Option<&str> {
            text.lines().find_map(|l| {
                let (k, v) = l.split_once('=')?;
                (k.trim() == key).then(|| v.trim())
            })
        };
        let need = |key: &str| get(key).ok_or_else(|| bad(format!("missing `{key}`")));
        let num = |key: &str| -> Result<f64, CliError> {
            let v = need(key)?;
            parse_f64(v).ok_or_else(|| bad(format!("bad number for `{key}`: {v}")))
        };
        Ok(Self {
            task: need("task")?.to_string(),
            schedule: need("schedule")?.to_string(),
            steps: need("steps")?.parse().map_err(|_| bad("bad `steps`".into()))?,
            final_new_loss: num("final_new_loss")?,
            final_new_accuracy: num("final_new_accuracy")?,
            initial_old_loss: num("initial_old_loss")?,
            final_old_loss: num("final_old_loss")?,
            final_old_accuracy: num("final_old_accuracy")?,
            cumulative_forgetting: num("cumulative_forgetting")?,
            clamp_active_fraction: num("clamp_active_fraction")?,
            min_slack: match get("min_slack") {
                Some(_) => Some(num("min_slack")?),
                None => None,
            },
        })
    }
}

pub fn write_run(dir: &Path, cfg: &RunConfig, data: &TaskData, run: &RunResult, report: Option<&BoundReport>) -> Result<RunSummary, CliError> {
    write(&dir.join(CONFIG_FILE), &cfg.render())?;
    write_data(dir, data)?;
    write(&dir.join(STEPS_FILE), &write_steps_csv(&run.records))?;
    write(&dir.join(EVAL_FILE), &write_eval_csv(&run.eval))?;
    let snaps = run.checkpoints.iter().map(|(s, t)| (*s, t.as_slice()));
    write(&dir.join(CHECKPOINTS_FILE), &write_checkpoints(&cfg.arch(), snaps))?;
    write(&dir.join(SCHEDULE_FILE), &run.final_schedule.snapshot())?;
    if let Some(r) = report {
        write_report(dir, r)?;
    }
    let summary = RunSummary::new(cfg, run, report);
    write(&dir.join(SUMMARY_FILE), &summary.render())?;
    Ok(summary)
}

pub fn write_report(dir: &Path, report: &BoundReport) -> Result<(), CliError> {
    write(&dir.join(REPORT_FILE), &write_report_csv(report))?;
    write(&dir.join(REPORT_SUMMARY_FILE), &write_summary(report))
}

pub fn load_config(dir: &Path) -> Result<RunConfig, CliError> {
    let path = dir.join(CONFIG_FILE);
    RunConfig::parse(&read(&path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Rebuilds a [`RunResult`] from a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, TaskData, RunResult), CliError> {
    let cfg = load_config(dir)?;
    let data = read_data(dir, &cfg)?;
    let in_file = |name: &str| {
        let p = dir.join(name);
        move |e: finch_core::DataError| CliError::Input(format!("{}: {e}", p.display()))
    };
    let records = read_steps_csv(&read(&dir.join(STEPS_FILE))?).map_err(in_file(STEPS_FILE))?;
    let eval = read_eval_csv(&read(&dir.join(EVAL_FILE))?).map_err(in_file(EVAL_FILE))?;
    let ck_path = dir.join(CHECKPOINTS_FILE);
    if !ck_path.exists() {
        return Err(CliError::Input(format!("{}: checkpoints missing", ck_path.display())));
    }
    let (arch, checkpoints) = read_checkpoints(&read(&ck_path)?).map_err(in_file(CHECKPOINTS_FILE))?;
    if arch != cfg.arch() {
        return Err(CliError::Input(format!(
            "{}: architecture `{}` does not match the config",
            ck_path.display(),
            arch.describe()
        )));
    }
    let first = checkpoints.first().filter(|c| c.0 == 0);
    let last = checkpoints.last().filter(|c| c.0 == records.len());
    let (Some(first), Some(last)) = (first, last) else {
        return Err(CliError::Input(format!(
            "{}: checkpoints must cover steps 0 and {}",
            ck_path.display(),
            records.len()
        )));
    };
    if eval.is_empty() {
        return Err(CliError::Input(format!("{}: no evaluation rows", dir.join(EVAL_FILE).display())));
    }
    let initial_params = finch_core::ModelParams::from_vec(arch, first.1.clone())?;
    let final_params = finch_core::ModelParams::from_vec(arch, last.1.clone())?;
    let final_schedule = ScheduleState::restore(&read(&dir.join(SCHEDULE_FILE))?)?;
    let initial_old_loss = records.first().map_or_else(
        || initial_params.ce_loss(&data.old_holdout.full()),
        |r| Ok(r.old_loss),
    )?;
    let final_old_loss = records.last().map_or(initial_old_loss, |r| r.old_loss + r.delta_old);
    let cumulative_forgetting = records.iter().map(|r| r.delta_old).sum();
    let mut train = cfg.train.clone();
    train.steps = records.len();
    let run = RunResult {
        sampler: BatchSampler { seed: train.seed, batch_size: train.batch_size, population: data.new_train.len() },
        records,
        initial_params,
        final_params,
        checkpoints,
        initial_old_loss,
        final_old_loss,
        cumulative_forgetting,
        eval,
        config: train,
        final_schedule,
        wall_clock: Duration::ZERO,
    };
    Ok((cfg, data, run))
}
