//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use finch_core::lab::{log::write_steps_csv, reference_finch, MatchBudget, MatchKnob};
use finch_core::scheduler::{kappa_trace, warmup_steps, DEFAULT_ETA_MAX};
use finch_core::verify::{
    check_corollary, check_grad_cap, check_pinsker_chain, check_step_bound, estimate_constants, grad_cap_check,
    ProbeConfig,
};
use finch_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

struct Ctx {
    data: TaskData,
    pre: ModelParams,
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn finch_config(seed: u64) -> TrainConfig {
    TrainConfig { schedule: ScheduleSpec::Finch(reference_finch()), seed, ..TrainConfig::default() }
}

fn theorem_certification(ctx: &Ctx) -> Verdict {
    let t = Instant::now();
    let run = finetune(&ctx.pre, &ctx.data, &TrainConfig::default()).unwrap();
    let constants = estimate_constants(&run, &ctx.data, &ProbeConfig::default()).unwrap();
    let rep = check_step_bound(&run, &ctx.data, &constants).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = rep.violations.is_empty() && rep.min_slack > -1e-9 && rep.checked() == 500 && secs < 120.0;
    verdict(
        pass,
        format!(
            "{} steps checked, {} violations, min slack {:.3e}, C1 {:.4}, C2 {:.4}, {:.1}s",
            rep.checked(),
            rep.violations.len(),
            rep.min_slack,
            constants.c1,
            constants.c2,
            secs
        ),
    )
}

fn random_params(arch: Architecture, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::init(arch, rng.random());
    let s = rng.random_range(0.05..5.0);
    p.theta_mut().iter_mut().for_each(|t| *t *= s);
    p
}

fn step3_bound(ctx: &Ctx) -> Verdict {
    let run = finetune(&ctx.pre, &ctx.data, &TrainConfig::default()).unwrap();
    let constants = estimate_constants(&run, &ctx.data, &ProbeConfig::default()).unwrap();
    let logged = check_grad_cap(&run, &ctx.data, &constants).unwrap();
    let logged_bad = logged.entries.iter().filter(|(_, c)| c.grad_norm > c.cap + 1e-8).count();

    let mut seq_task = TaskPair::reference();
    seq_task.family = TaskFamily::SeqBigramShift;
    seq_task.new.shift = 0.5;
    let seq = seq_task.materialize().unwrap();
    let sources = [
        (ctx.pre.arch(), &ctx.data),
        (Architecture::Mlp2 { classes: 5, features: 20, hidden: 8 }, &ctx.data),
        (seq_task.default_arch(), &seq),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut random_bad = 0;
    let mut worst: f64 = 0.0;
    for draw in 0..1000 {
        let (arch, d) = sources[draw % 3];
        let p = random_params(arch, &mut rng);
        let n = rng.random_range(1..=32);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..d.new_train.len())).collect();
        let c = grad_cap_check(&p, &d.new_train.batch(&idx)).unwrap();
        if c.grad_norm > c.cap + 1e-8 {
            random_bad += 1;
        }
        worst = worst.max(c.ratio());
    }
    verdict(
        logged_bad == 0 && random_bad == 0,
        format!(
            "{} logged steps ({} over), 1000 random draws ({} over), max |g|/cap {:.3} logged, {:.3} random",
            logged.entries.len(),
            logged_bad,
            random_bad,
            logged.max_ratio,
            worst
        ),
    )
}

fn simplex(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // exponential spacings, sometimes sharpened toward a vertex
    let power = if rng.random_bool(0.3) { rng.random_range(1.0..20.0) } else { 1.0 };
    let w: Vec<f64> = (0..k).map(|_| (-rng.random_range(1e-300f64..1.0).ln()).powf(power)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn pinsker(_: &Ctx) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut bad, mut vacuous) = (0, 0);
    for _ in 0..100_000 {
        let k = rng.random_range(2..=64);
        let p = simplex(k, &mut rng);
        let q = if rng.random_bool(0.5) {
            let mut v = vec![0.0; k];
            v[rng.random_range(0..k)] = 1.0;
            v
        } else {
            simplex(k, &mut rng)
        };
        let c = check_pinsker_chain(&p, &q).unwrap();
        if !c.holds() {
            bad += 1;
        }
        if c.vacuous() {
            vacuous += 1;
        }
    }
    verdict(bad == 0, format!("100000 pairs, K in 2..=64, {bad} violations, {vacuous} vacuous"))
}

fn fd_relative_error(p: &ModelParams, batch: &Batch<'_>) -> f64 {
    let g = p.grad_ce(batch).unwrap();
    let h = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &gj) in g.iter().enumerate() {
        let mut plus = p.clone();
        plus.theta_mut()[j] += h;
        let mut minus = p.clone();
        minus.theta_mut()[j] -= h;
        let fd = (plus.ce_loss(batch).unwrap() - minus.ce_loss(batch).unwrap()) / (2.0 * h);
        num += (fd - gj).powi(2);
        den += fd.powi(2).max(gj.powi(2));
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn soft_target(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn gradient_oracle(_: &Ctx) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in 0..3 {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let k = rng.random_range(2..=6);
            let (arch, data) = if kind < 2 {
                let d = rng.random_range(1..=6);
                let arch = if kind == 0 {
                    Architecture::LinearSoftmax { classes: k, features: d }
                } else {
                    Architecture::Mlp2 { classes: k, features: d, hidden: rng.random_range(1..=6) }
                };
                let ex = (0..rng.random_range(1..=5))
                    .map(|_| {
                        let x = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                        let q = if rng.random_bool(0.5) {
                            soft_target(k, &mut rng)
                        } else {
                            let mut v = vec![0.0; k];
                            v[rng.random_range(0..k)] = 1.0;
                            v
                        };
                        LabeledExample::new(x, q).unwrap()
                    })
                    .collect();
                (arch, Dataset::Labeled(ex))
            } else {
                let arch = Architecture::SeqLinear { vocab: k, context: rng.random_range(1..=3) };
                let seqs = (0..rng.random_range(1..=4))
                    .map(|_| {
                        let len = rng.random_range(1..=6);
                        SequenceExample::new((0..len).map(|_| rng.random_range(0..k)).collect(), k).unwrap()
                    })
                    .collect();
                (arch, Dataset::Sequence(seqs))
            };
            let p = random_params(arch, &mut rng);
            worst = worst.max(fd_relative_error(&p, &data.full()));
        }
        pass &= worst < 1e-5;
        lines.push(format!("{} max rel err {:.2e}", ["linear_softmax", "mlp2", "seq_linear"][kind], worst));
    }
    verdict(pass, format!("100 cases each; {}", lines.join(", ")))
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

fn kappa_constancy(ctx: &Ctx) -> Verdict {
    let cfg = finch_config(0);
    let run = finetune(&ctx.pre, &ctx.data, &cfg).unwrap();
    let fin = reference_finch();
    let unclamped = 1.0 - run.clamp_active_fraction();
    let history: Vec<(f64, f64)> = run
        .records
        .iter()
        .filter(|r| !fin.is_clamped(r.ema_loss))
        .map(|r| (r.ema_loss, r.lr))
        .collect();
    let worst = kappa_trace(&history, fin.epsilon).iter().map(|&k| ulps(k, fin.eta_base)).max().unwrap_or(0);
    verdict(
        unclamped >= 0.9 && worst <= 10,
        format!("{:.0}% of steps unclamped, worst deviation {} ulps over {} steps", unclamped * 100.0, worst, history.len()),
    )
}

fn corollary(ctx: &Ctx) -> Verdict {
    let run = finetune(&ctx.pre, &ctx.data, &finch_config(0)).unwrap();
    let constants = estimate_constants(&run, &ctx.data, &ProbeConfig::default()).unwrap();
    let c = check_corollary(&run, &constants).unwrap();
    verdict(
        c.cumulative_forgetting <= c.bound_sum && c.total_slack > 0.0,
        format!(
            "cumulative forgetting {:.4} vs bound sum {:.2} (slack {:.2}); leading-term spread {:.2}",
            c.cumulative_forgetting, c.bound_sum, c.total_slack, c.leading_spread
        ),
    )
}

fn mechanism(ctx: &Ctx) -> Verdict {
    // tighter than the 5% criterion so the residual mismatch cannot decide the comparison
    let budget = MatchBudget { knob: MatchKnob::Rate, tolerance: 0.01, rounds: 30, ..MatchBudget::default() };
    let mut wins = 0;
    let mut rows = Vec::new();
    let mut matched = true;
    for seed in 0..5 {
        let constant = TrainConfig { seed, ..TrainConfig::default() };
        let m = match_final_loss(&ctx.pre, &ctx.data, &finch_config(seed), &constant, budget).unwrap();
        matched &= (m.final_loss_a - m.final_loss_b).abs() <= 0.05 * m.final_loss_a.min(m.final_loss_b);
        let f = finetune(&ctx.pre, &ctx.data, &m.a).unwrap().cumulative_forgetting;
        let c = finetune(&ctx.pre, &ctx.data, &m.b).unwrap().cumulative_forgetting;
        if f < c {
            wins += 1;
        }
        rows.push(format!("{f:.4}/{c:.4}"));
    }
    verdict(
        matched && wins == 5,
        format!("finch lower on {wins}/5 seeds (finch/constant forgetting: {})", rows.join(" ")),
    )
}

fn ema_direct(losses: &[f64], alpha: f64) -> f64 {
    let n = losses.len() - 1;
    let mut s = alpha.powi(n as i32) * losses[0];
    for (j, l) in losses.iter().enumerate().skip(1) {
        s += (1.0 - alpha) * alpha.powi((n - j) as i32) * l;
    }
    s
}

fn schedule_conformance(_: &Ctx) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut problems = Vec::new();

    let cap = FinchConfig::new(5e-5, DEFAULT_ETA_MAX);
    let mut s = ScheduleState::new(ScheduleSpec::Finch(cap)).unwrap();
    let mut over = 0;
    for _ in 0..1000 {
        let loss = 10f64.powf(rng.random_range(-14.0..1.0));
        if s.observe(loss).unwrap() > 5e-5 {
            over += 1;
        }
    }
    let mut tiny = ScheduleState::new(ScheduleSpec::Finch(cap)).unwrap();
    if tiny.observe(1e-12).unwrap() != 5e-5 || over > 0 {
        problems.push("clamp".to_string());
    }

    let mut ema_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let mut e = EmaTracker::new(0.9).unwrap();
        let mut last = 0.0;
        for &l in &losses {
            last = e.observe(l);
        }
        ema_err = ema_err.max((last - ema_direct(&losses, 0.9)).abs());
    }
    if ema_err > 1e-12 {
        problems.push(format!("ema error {ema_err:e}"));
    }

    let peak = 1e-2;
    let total = 500;
    let w = warmup_steps(0.05, total) as usize;
    let mut s = ScheduleState::new(ScheduleSpec::warmup_cosine(peak, total)).unwrap();
    let lrs: Vec<f64> = (0..total).map(|_| s.observe(1.0).unwrap()).collect();
    let at_w = lrs[w - 1];
    let last = *lrs.last().unwrap();
    if (at_w - peak).abs() > 1e-15 || last > 1e-3 * peak {
        problems.push(format!("warmup-cosine lr at W={w} {at_w:e}, final {last:e}"));
    }
    if s.observe(1.0).is_ok() {
        problems.push("warmup-cosine ran past total".into());
    }
    verdict(
        problems.is_empty(),
        format!(
            "cap 5e-5 over 1000 losses, ema max error {ema_err:.1e}, warmup W={w} lr {at_w:e}, final {last:.2e}{}",
            if problems.is_empty() { String::new() } else { format!("; problems: {}", problems.join(", ")) }
        ),
    )
}

fn determinism(ctx: &Ctx) -> Verdict {
    let mut same = true;
    for cfg in [TrainConfig::default(), finch_config(3)] {
        let a = write_steps_csv(&finetune(&ctx.pre, &ctx.data, &cfg).unwrap().records);
        let b = write_steps_csv(&finetune(&ctx.pre, &ctx.data, &cfg).unwrap().records);
        same &= a.as_bytes() == b.as_bytes();
    }
    let task = TaskPair::reference();
    let rebuilt = task.materialize().unwrap();
    let pre = pretrain(&ModelParams::init(task.default_arch(), 0), &rebuilt, &TrainConfig::default()).unwrap();
    same &= pre == ctx.pre && rebuilt == ctx.data;
    verdict(same, "reruns of constant and finch configs produce byte-identical step CSVs")
}

fn grad_clip_ablation(ctx: &Ctx) -> Verdict {
    let norms = [1.0, 0.1, 0.01, 0.001];
    let acc: Vec<f64> = norms
        .iter()
        .map(|&c| {
            let cfg = TrainConfig { grad_clip: Some(c), ..TrainConfig::default() };
            finetune(&ctx.pre, &ctx.data, &cfg).unwrap().final_eval().new_accuracy
        })
        .collect();
    let ordered = acc.windows(2).filter(|w| w[1] <= w[0]).count();
    let rendered: Vec<String> = norms.iter().zip(&acc).map(|(n, a)| format!("{n}:{a:.3}")).collect();
    verdict(
        ordered == 3,
        format!("new-task accuracy {}; {}/3 adjacent pairs non-increasing", rendered.join(" "), ordered),
    )
}

type Criterion = fn(&Ctx) -> Verdict;

fn main() {
    let started = Instant::now();
    let task = TaskPair::reference();
    let data = task.materialize().unwrap();
    let pre = pretrain(&ModelParams::init(task.default_arch(), 0), &data, &TrainConfig::default()).unwrap();
    let ctx = Ctx { data, pre };

    let criteria: [(&str, Criterion); 10] = [
        ("theorem certification", theorem_certification),
        ("step-3 gradient bound", step3_bound),
        ("pinsker chain", pinsker),
        ("gradient oracle", gradient_oracle),
        ("kappa constancy", kappa_constancy),
        ("corollary direction", corollary),
        ("mechanism direction", mechanism),
        ("schedule conformance", schedule_conformance),
        ("determinism", determinism),
        ("grad-clip ablation", grad_clip_ablation),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&ctx))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {name} ({:.1}s): {}",
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
