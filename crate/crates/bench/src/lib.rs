//! Shared fixtures for the kernel benchmarks.

use finch_core::lab::{finetune, pretrain, reference_finch, RunResult, TaskData, TaskPair, TrainConfig};
use finch_core::{Architecture, ModelParams, ScheduleSpec};

pub struct Fixture {
    pub data: TaskData,
    pub arch: Architecture,
    pub pretrained: ModelParams,
}

/// Reference task with a pretrained model of the given architecture.
pub fn fixture(arch: Architecture) -> Fixture {
    let data = TaskPair::reference().materialize().expect("reference task");
    let init = ModelParams::init(arch, 1);
    let pre = TrainConfig { steps: 200, ..TrainConfig::default() };
    let pretrained = pretrain(&init, &data, &pre).expect("pretrain");
    Fixture { data, arch, pretrained }
}

pub fn linear() -> Architecture {
    Architecture::LinearSoftmax { classes: 5, features: 20 }
}

pub fn mlp2() -> Architecture {
    Architecture::Mlp2 { classes: 5, features: 20, hidden: 16 }
}

/// A short FINCH fine-tuning run with every step checkpointed.
pub fn short_run(fx: &Fixture, steps: usize) -> RunResult {
    let cfg = TrainConfig {
        schedule: ScheduleSpec::Finch(reference_finch()),
        steps,
        checkpoint_stride: 1,
        ..TrainConfig::default()
    };
    finetune(&fx.pretrained, &fx.data, &cfg).expect("finetune")
}
