//! Gradient-versus-loss cap `|g| <= M sqrt(2 L)` and its Jensen chain.

use super::constants::BoundConstants;
use crate::error::VerifyError;
use crate::lab::{RunResult, TaskData};
use crate::model::{Batch, ModelParams};
use crate::numeric::norm2;

const CHAIN_TOLERANCE: f64 = 1e-8;

/// The chain for one batch, each link no larger than the next:
/// `|g| <= mean_j |g_j| <= mean_j M sqrt(2 L_j) <= M sqrt(2 L)`,
/// where `j` runs over examples (or whole sequences).
#[derive(Debug, Clone, PartialEq)]
pub struct GradCapCheck {
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_example_grad_norm: f64,
    pub mean_example_cap: f64,
    /// Largest Jacobian norm over the batch's prediction points.
    pub m: f64,
    pub cap: f64,
}

impl GradCapCheck {
    pub fn links(&self) -> [f64; 4] {
        [self.grad_norm, self.mean_example_grad_norm, self.mean_example_cap, self.cap]
    }

    pub fn holds(&self) -> bool {
        self.links()
            .windows(2)
            .all(|w| w[0] <= w[1] + CHAIN_TOLERANCE)
    }

    /// `|g| / (M sqrt(2 L))`.
    pub fn ratio(&self) -> f64 {
        if self.cap > 0.0 {
            self.grad_norm / self.cap
        } else {
            0.0
        }
    }
}

fn batch_points(params: &ModelParams, batch: &Batch<'_>) -> Vec<Vec<f64>> {
    match (batch, params.arch()) {
        (Batch::Labeled(v), _) => v.iter().map(|e| e.x().to_vec()).collect(),
        (Batch::Sequence(v), crate::model::Architecture::SeqLinear { vocab, context }) => v
            .iter()
            .flat_map(|s| (0..s.len()).map(move |t| s.position_features(t, vocab, context)))
            .collect(),
        (Batch::Sequence(_), _) => Vec::new(),
    }
}

/// Evaluates the chain at `params` with `M` taken over the batch itself.
pub fn grad_cap_check(params: &ModelParams, batch: &Batch<'_>) -> Result<GradCapCheck, VerifyError> {
    let mut m: f64 = 0.0;
    for x in batch_points(params, batch) {
        m = m.max(params.jacobian_opnorm(&x)?);
    }
    grad_cap_check_with(params, batch, m)
}

/// As [`grad_cap_check`] with a caller-supplied Jacobian bound `m`.
pub fn grad_cap_check_with(params: &ModelParams, batch: &Batch<'_>, m: f64) -> Result<GradCapCheck, VerifyError> {
    let terms = params.example_terms(batch, true)?;
    let n = terms.len() as f64;
    let mut grad = vec![0.0; params.dim()];
    let (mut loss, mut mean_norm, mut mean_cap) = (0.0, 0.0, 0.0);
    for (l, g) in &terms {
        loss += l / n;
        mean_norm += norm2(g) / n;
        mean_cap += m * (2.0 * l).sqrt() / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok(GradCapCheck {
        loss,
        grad_norm: norm2(&grad),
        mean_example_grad_norm: mean_norm,
        mean_example_cap: mean_cap,
        m,
        cap: m * (2.0 * loss).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCapReport {
    /// `(step, check)` for every step whose start point was checkpointed.
    pub entries: Vec<(usize, GradCapCheck)>,
    pub failures: Vec<usize>,
    /// Steps whose logged gradient norm disagrees with the recomputation.
    pub log_mismatches: Vec<usize>,
    pub max_ratio: f64,
}

impl GradCapReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.log_mismatches.is_empty()
    }
}

/// Re-evaluates every logged batch against the cap with `M = M_train`.
pub fn check_grad_cap(run: &RunResult, data: &TaskData, constants: &BoundConstants) -> Result<GradCapReport, VerifyError> {
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut log_mismatches = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for rec in &run.records {
        let Some(p) = run.params_at(rec.step) else { continue };
        let idx = run.sampler.indices(rec.step);
        let batch = data.new_train.batch(&idx);
        let c = grad_cap_check_with(&p, &batch, constants.m_train)?;
        if !c.holds() {
            failures.push(rec.step);
        }
        if (c.grad_norm - rec.grad_norm).abs() > 1e-10 * rec.grad_norm.max(1.0) {
            log_mismatches.push(rec.step);
        }
        max_ratio = max_ratio.max(c.ratio());
        entries.push((rec.step, c));
    }
    Ok(GradCapReport { entries, failures, log_mismatches, max_ratio })
}
