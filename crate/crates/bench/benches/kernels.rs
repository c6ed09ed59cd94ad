use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use finch_bench::{fixture, linear, mlp2, short_run};
use finch_core::model::PowerIteration;
use finch_core::verify::{estimate_constants, ProbeConfig};
use finch_core::{FinchConfig, ScheduleSpec, ScheduleState};
use std::hint::black_box;

fn schedule(c: &mut Criterion) {
    let losses: Vec<f64> = (0..1000).map(|i| 2.0 / (1.0 + i as f64 * 0.01)).collect();
    c.bench_function("finch_observe_1000", |b| {
        b.iter_batched(
            || ScheduleState::new(ScheduleSpec::Finch(FinchConfig::new(2e-5, 5e-5))).unwrap(),
            |mut s| {
                for &l in &losses {
                    black_box(s.observe(l).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
}

fn gradients(c: &mut Criterion) {
    for (name, arch) in [("linear", linear()), ("mlp2", mlp2())] {
        let fx = fixture(arch);
        let idx: Vec<usize> = (0..16).collect();
        let batch = fx.data.new_train.batch(&idx);
        c.bench_function(&format!("grad_ce_{name}_b16"), |b| {
            b.iter(|| black_box(fx.pretrained.grad_ce(&batch).unwrap()))
        });
    }
}

fn curvature(c: &mut Criterion) {
    for (name, arch) in [("linear", linear()), ("mlp2", mlp2())] {
        let fx = fixture(arch);
        let items = fx.data.old_holdout.items_at(&fx.arch, &[0]);
        let (x, q) = &items[0];
        let y = q.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let power = PowerIteration::default();
        c.bench_function(&format!("hessian_power_{name}"), |b| {
            b.iter(|| black_box(power.run(&fx.pretrained, x, y, None)))
        });
    }
}

fn constants(c: &mut Criterion) {
    let fx = fixture(linear());
    let run = short_run(&fx, 20);
    let probe = ProbeConfig::default();
    let mut g = c.benchmark_group("verify");
    g.sample_size(10);
    g.bench_function("estimate_constants_linear_20_steps", |b| {
        b.iter(|| black_box(estimate_constants(&run, &fx.data, &probe).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, schedule, gradients, curvature, constants);
criterion_main!(benches);
