//! Forward and reverse passes.

use super::data::{argmax, Batch};
use super::{Architecture, ModelParams};
use crate::error::ModelError;
use crate::numeric::log_softmax;

pub(crate) struct Forward {
    pub logits: Vec<f64>,
    /// Post-activation hidden units (`mlp2` only).
    pub hidden: Vec<f64>,
}

/// Cross-entropy `-sum_k q_k log p_k`; classes with zero target mass are skipped.
pub(crate) fn cross_entropy(q: &[f64], log_p: &[f64]) -> f64 {
    q.iter()
        .zip(log_p)
        .filter(|(&qk, _)| qk > 0.0)
        .fold(0.0, |acc, (qk, lp)| acc - qk * lp)
}

fn linear_logits(theta: &[f64], k: usize, d: usize, x: &[f64]) -> Vec<f64> {
    let (w, b) = theta.split_at(k * d);
    (0..k)
        .map(|r| {
            let row = &w[r * d..(r + 1) * d];
            row.iter().zip(x).fold(b[r], |acc, (wi, xi)| acc + wi * xi)
        })
        .collect()
}

impl ModelParams {
    pub(crate) fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.arch.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Forward {
        let k = self.arch.classes();
        let d = self.arch.input_dim();
        match self.arch {
            Architecture::LinearSoftmax { .. } | Architecture::SeqLinear { .. } => Forward {
                logits: linear_logits(&self.theta, k, d, x),
                hidden: Vec::new(),
            },
            Architecture::Mlp2 { hidden: h, .. } => {
                let (first, second) = self.theta.split_at(h * d + h);
                let hidden: Vec<f64> = linear_logits(first, h, d, x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                Forward {
                    logits: linear_logits(second, k, h, &hidden),
                    hidden,
                }
            }
        }
    }

    /// Accumulate `scale * J(x)^T v` into `out`, where `J` is the logit Jacobian.
    pub(crate) fn backward(&self, x: &[f64], fwd: &Forward, v: &[f64], scale: f64, out: &mut [f64]) {
        let k = self.arch.classes();
        let d = self.arch.input_dim();
        match self.arch {
            Architecture::LinearSoftmax { .. } | Architecture::SeqLinear { .. } => {
                let (gw, gb) = out.split_at_mut(k * d);
                for r in 0..k {
                    let c = scale * v[r];
                    if c == 0.0 {
                        continue;
                    }
                    for (g, xi) in gw[r * d..(r + 1) * d].iter_mut().zip(x) {
                        *g += c * xi;
                    }
                    gb[r] += c;
                }
            }
            Architecture::Mlp2 { hidden: h, .. } => {
                let (g1, g2) = out.split_at_mut(h * d + h);
                let w2 = &self.theta[h * d + h..h * d + h + k * h];
                let (gw2, gb2) = g2.split_at_mut(k * h);
                let mut delta = vec![0.0; h];
                for r in 0..k {
                    let c = scale * v[r];
                    let row = &w2[r * h..(r + 1) * h];
                    for m in 0..h {
                        gw2[r * h + m] += c * fwd.hidden[m];
                        delta[m] += row[m] * c;
                    }
                    gb2[r] += c;
                }
                let (gw1, gb1) = g1.split_at_mut(h * d);
                for m in 0..h {
                    let hm = fwd.hidden[m];
                    let dm = delta[m] * (1.0 - hm * hm);
                    if dm == 0.0 {
                        continue;
                    }
                    for (g, xi) in gw1[m * d..(m + 1) * d].iter_mut().zip(x) {
                        *g += dm * xi;
                    }
                    gb1[m] += dm;
                }
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        Ok(self.forward(x).logits)
    }

    pub fn log_probs(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(log_softmax(&self.logits(x)?))
    }

    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.log_probs(x)?.into_iter().map(f64::exp).collect())
    }

    /// CE of one prediction point; accumulates `scale * grad` into `out` when given.
    pub(crate) fn point_term(&self, x: &[f64], q: &[f64], scale: f64, out: Option<&mut [f64]>) -> f64 {
        let fwd = self.forward(x);
        let lp = log_softmax(&fwd.logits);
        let ce = cross_entropy(q, &lp);
        if let Some(out) = out {
            let resid: Vec<f64> = lp.iter().zip(q).map(|(l, qk)| l.exp() - qk).collect();
            self.backward(x, &fwd, &resid, scale, out);
        }
        ce
    }

    /// Per-example (labeled) or per-sequence loss terms, each with its gradient
    /// when `with_grad` is set. Sequence terms are token averages.
    pub fn example_terms(&self, batch: &Batch<'_>, with_grad: bool) -> Result<Vec<(f64, Vec<f64>)>, ModelError> {
        batch.check(&self.arch)?;
        let dim = if with_grad { self.dim() } else { 0 };
        let terms = match batch {
            Batch::Labeled(v) => v
                .iter()
                .map(|e| {
                    let mut g = vec![0.0; dim];
                    let out = with_grad.then_some(g.as_mut_slice());
                    let ce = self.point_term(e.x(), e.q(), 1.0, out);
                    (ce, g)
                })
                .collect(),
            Batch::Sequence(v) => {
                let (vocab, context) = match self.arch {
                    Architecture::SeqLinear { vocab, context } => (vocab, context),
                    _ => unreachable!("checked above"),
                };
                v.iter()
                    .map(|s| {
                        let inv_t = 1.0 / s.len() as f64;
                        let mut g = vec![0.0; dim];
                        let mut total = 0.0;
                        for t in 0..s.len() {
                            let x = s.position_features(t, vocab, context);
                            let out = with_grad.then_some(g.as_mut_slice());
                            total += self.point_term(&x, s.target(t), inv_t, out);
                        }
                        (total * inv_t, g)
                    })
                    .collect()
            }
        };
        Ok(terms)
    }

    /// Mean cross-entropy of the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &Batch<'_>) -> Result<(f64, Vec<f64>), ModelError> {
        let terms = self.example_terms(batch, true)?;
        let inv_n = 1.0 / terms.len() as f64;
        let mut grad = vec![0.0; self.dim()];
        let mut loss = 0.0;
        for (l, g) in &terms {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        for a in grad.iter_mut() {
            *a *= inv_n;
        }
        Ok((loss * inv_n, grad))
    }

    pub fn ce_loss(&self, batch: &Batch<'_>) -> Result<f64, ModelError> {
        let terms = self.example_terms(batch, false)?;
        Ok(terms.iter().fold(0.0, |acc, (l, _)| acc + l) / terms.len() as f64)
    }

    pub fn grad_ce(&self, batch: &Batch<'_>) -> Result<Vec<f64>, ModelError> {
        Ok(self.loss_and_grad(batch)?.1)
    }

    /// Fraction of prediction points whose argmax matches the target's argmax
    /// (sequence batches average per sequence, then over sequences).
    pub fn accuracy(&self, batch: &Batch<'_>) -> Result<f64, ModelError> {
        batch.check(&self.arch)?;
        let hit = |x: &[f64], q: &[f64]| (argmax(&self.forward(x).logits) == argmax(q)) as u8 as f64;
        let total = match batch {
            Batch::Labeled(v) => v.iter().fold(0.0, |acc, e| acc + hit(e.x(), e.q())),
            Batch::Sequence(v) => {
                let Architecture::SeqLinear { vocab, context } = self.arch else {
                    unreachable!("checked above")
                };
                v.iter().fold(0.0, |acc, s| {
                    let hits = (0..s.len()).fold(0.0, |a, t| {
                        a + hit(&s.position_features(t, vocab, context), s.target(t))
                    });
                    acc + hits / s.len() as f64
                })
            }
        };
        Ok(total / batch.len() as f64)
    }
}
