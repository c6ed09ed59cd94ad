//! Trajectory suprema of the Jacobian, score and Hessian norms.

use crate::error::VerifyError;
use crate::lab::{RunResult, TaskData};
use crate::model::{Architecture, ModelParams, PowerIteration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Largest checkpoint stride accepted by [`estimate_constants`].
pub const MAX_CHECKPOINT_STRIDE: usize = 10;

/// Non-convergence rate above which the Hessian supremum is flagged.
pub const MAX_NONCONVERGED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    /// Training inputs drawn (with a fixed seed) into the probe set.
    pub train_draw: usize,
    /// Also probe every training input the run's batches touched, so the
    /// Jacobian supremum covers each step's batch.
    pub include_batch_inputs: bool,
    /// Hessian probes run on every `hessian_stride`-th step segment.
    pub hessian_stride: usize,
    /// Interior points sampled on each probed segment, besides its endpoints.
    pub interior_points: usize,
    pub seed: u64,
    pub power: PowerIteration,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_draw: 256,
            include_batch_inputs: true,
            hessian_stride: 10,
            interior_points: 3,
            seed: 0,
            power: PowerIteration::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDescription {
    pub param_points: usize,
    pub hessian_points: usize,
    pub old_items: usize,
    pub train_items: usize,
    pub hessian_probes: usize,
    pub hessian_nonconverged: usize,
    pub checkpoint_stride: usize,
    pub hessian_stride: usize,
    pub interior_points: usize,
}

impl ProbeDescription {
    pub fn summary(&self) -> String {
        format!(
            "{} checkpoints (stride {}) + {} Hessian points ({} interior per segment, every {} steps); \
             {} old-holdout items, {} training items; {} Hessian probes, {} unconverged",
            self.param_points,
            self.checkpoint_stride,
            self.hessian_points,
            self.interior_points,
            self.hessian_stride,
            self.old_items,
            self.train_items,
            self.hessian_probes,
            self.hessian_nonconverged
        )
    }
}

/// Measured suprema and the theorem constants assembled from them:
/// `C1 = sqrt(2) G M_train`, `C2 = H M_train^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    pub m_train: f64,
    pub m_old: f64,
    pub g: f64,
    pub h: f64,
    pub c1: f64,
    pub c2: f64,
    pub reliable: bool,
    pub probe: ProbeDescription,
}

impl BoundConstants {
    pub fn from_suprema(m_train: f64, m_old: f64, g: f64, h: f64, probe: ProbeDescription) -> Self {
        Self {
            m_train,
            m_old,
            g,
            h,
            c1: 2f64.sqrt() * g * m_train,
            c2: h * m_train * m_train,
            reliable: true,
            probe,
        }
    }

    pub fn m(&self) -> f64 {
        self.m_train.max(self.m_old)
    }

    /// `C1 lr sqrt(L) + C2 lr^2 L`.
    pub fn theorem_bound(&self, lr: f64, batch_loss: f64) -> f64 {
        self.c1 * lr * batch_loss.sqrt() + self.c2 * lr * lr * batch_loss
    }

    /// The intermediate bound `G |d| + H |d|^2 / 2` for a step of length `|d|`.
    pub fn taylor_bound(&self, step_norm: f64) -> f64 {
        self.g * step_norm + 0.5 * self.h * step_norm * step_norm
    }

    /// Theorem bound rebuilt by substituting the gradient cap
    /// `M_train sqrt(2 L)` into the Taylor form.
    pub fn composed_bound(&self, lr: f64, batch_loss: f64) -> f64 {
        let cap = self.m_train * (2.0 * batch_loss).sqrt();
        lr * self.g * cap + 0.5 * lr * lr * self.h * cap * cap
    }
}

/// Prediction points with every class that carries target mass.
pub(crate) fn labelled_items(items: Vec<(Vec<f64>, Vec<f64>)>) -> Vec<(Vec<f64>, Vec<usize>)> {
    items
        .into_iter()
        .map(|(x, q)| {
            let ys = q.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect();
            (x, ys)
        })
        .collect()
}

fn train_probe_indices(run: &RunResult, population: usize, probe: &ProbeConfig) -> Vec<usize> {
    let mut set = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    for _ in 0..probe.train_draw.min(population) {
        set.insert(rng.random_range(0..population));
    }
    if probe.include_batch_inputs {
        for step in 0..run.records.len() {
            set.extend(run.sampler.indices(step));
        }
    }
    set.into_iter().collect()
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

pub(crate) fn jacobian_max(p: &ModelParams, items: &[(Vec<f64>, Vec<usize>)]) -> Result<f64, VerifyError> {
    let mut m: f64 = 0.0;
    for (x, _) in items {
        m = m.max(p.jacobian_opnorm(x)?);
    }
    Ok(m)
}

/// Suprema of `|J|`, `|grad log p|` and `|Hess log p|` along a recorded run.
///
/// `M` and `G` are evaluated at every checkpoint; `H` on every
/// `hessian_stride`-th step segment `[theta_i, theta_{i+1}]` at its endpoints
/// and `interior_points` evenly spaced interior points. Probe inputs are the
/// full old holdout plus the sampled training inputs.
pub fn estimate_constants(run: &RunResult, data: &TaskData, probe: &ProbeConfig) -> Result<BoundConstants, VerifyError> {
    let stride = run.config.checkpoint_stride;
    if stride > MAX_CHECKPOINT_STRIDE {
        return Err(VerifyError::Precondition(format!(
            "checkpoint stride {stride} exceeds {MAX_CHECKPOINT_STRIDE}"
        )));
    }
    let arch: Architecture = run.initial_params.arch();
    let old = labelled_items(data.old_holdout.items(&arch));
    let train_idx = train_probe_indices(run, data.new_train.len(), probe);
    let train = labelled_items(data.new_train.items_at(&arch, &train_idx));

    let mut m_train: f64 = 0.0;
    let mut m_old: f64 = 0.0;
    let mut g: f64 = 0.0;
    let mut scan = |p: &ModelParams| -> Result<(), VerifyError> {
        m_train = m_train.max(jacobian_max(p, &train)?);
        for (x, ys) in &old {
            m_old = m_old.max(p.jacobian_opnorm(x)?);
            for &y in ys {
                g = g.max(p.score_norm(x, y)?);
            }
        }
        Ok(())
    };
    for (_, theta) in &run.checkpoints {
        scan(&run.initial_params.with_theta(theta.clone()))?;
    }

    // Hessian points: sampled segments between consecutive checkpoints.
    let mut points: Vec<Vec<f64>> = Vec::new();
    let hs = probe.hessian_stride.max(1);
    for (seg, pair) in run.checkpoints.windows(2).enumerate() {
        if seg % hs != 0 && seg + 2 != run.checkpoints.len() {
            continue;
        }
        let (a, b) = (&pair[0].1, &pair[1].1);
        points.push(a.clone());
        for j in 1..=probe.interior_points {
            points.push(lerp(a, b, j as f64 / (probe.interior_points + 1) as f64));
        }
        points.push(b.clone());
    }
    if points.is_empty() {
        points.push(run.initial_params.theta().to_vec());
    }
    let interior: Vec<ModelParams> = points.iter().map(|t| run.initial_params.with_theta(t.clone())).collect();
    for p in &interior {
        scan(p)?;
    }

    let mut h: f64 = 0.0;
    let mut probes = 0usize;
    let mut nonconverged = 0usize;
    for (x, ys) in old.iter().chain(&train) {
        for &y in ys {
            // warm start along the trajectory: neighbouring points share eigenvectors
            let mut warm: Option<Vec<f64>> = None;
            for p in &interior {
                let est = probe.power.run(p, x, y, warm.as_deref());
                probes += 1;
                if !est.converged {
                    nonconverged += 1;
                }
                h = h.max(est.value);
                warm = Some(est.vector);
            }
        }
    }

    let description = ProbeDescription {
        param_points: run.checkpoints.len(),
        hessian_points: interior.len(),
        old_items: old.len(),
        train_items: train.len(),
        hessian_probes: probes,
        hessian_nonconverged: nonconverged,
        checkpoint_stride: stride,
        hessian_stride: hs,
        interior_points: probe.interior_points,
    };
    let mut c = BoundConstants::from_suprema(m_train, m_old, g, h, description);
    c.reliable = probes == 0 || (nonconverged as f64) <= MAX_NONCONVERGED_FRACTION * probes as f64;
    Ok(c)
}
