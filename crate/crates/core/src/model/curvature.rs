//! Logit Jacobians, score vectors and log-probability Hessian probes.

use super::data::one_hot;
use super::{Architecture, ModelParams, DENSE_PARAM_CAP};
use crate::error::ModelError;
use crate::numeric::{dot, log_softmax, norm2};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

impl ModelParams {
    fn check_dense(&self) -> Result<(), ModelError> {
        if self.dim() > DENSE_PARAM_CAP {
            return Err(ModelError::TooLarge {
                dim: self.dim(),
                cap: DENSE_PARAM_CAP,
            });
        }
        Ok(())
    }

    fn check_class(&self, y: usize) -> Result<(), ModelError> {
        let k = self.arch.classes();
        if y >= k {
            return Err(ModelError::ClassOutOfRange { index: y, classes: k });
        }
        Ok(())
    }

    /// Rows of the logit Jacobian, one per class.
    pub(crate) fn jacobian_rows(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let k = self.arch.classes();
        let fwd = self.forward(x);
        (0..k)
            .map(|r| {
                let mut row = vec![0.0; self.dim()];
                self.backward(x, &fwd, &one_hot(k, r), 1.0, &mut row);
                row
            })
            .collect()
    }

    /// Dense `K x dim(theta)` Jacobian of the logits.
    pub fn logit_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_input(x)?;
        self.check_dense()?;
        let rows = self.jacobian_rows(x);
        Ok(DMatrix::from_fn(rows.len(), self.dim(), |r, c| rows[r][c]))
    }

    /// Operator norm of the logit Jacobian.
    ///
    /// For the linear architectures the Jacobian is `I_K (x) [x; 1]^T`, whose
    /// norm is `sqrt(|x|^2 + 1)`; other architectures go through the
    /// `K x K` Gram matrix.
    pub fn jacobian_opnorm(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        match self.arch {
            Architecture::LinearSoftmax { .. } | Architecture::SeqLinear { .. } => {
                Ok((dot(x, x) + 1.0).sqrt())
            }
            Architecture::Mlp2 { .. } => Ok(gram_opnorm(&self.jacobian_rows(x))),
        }
    }

    /// `grad_theta log p(y | x) = J^T (e_y - p)`.
    pub fn score(&self, x: &[f64], y: usize) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        self.check_class(y)?;
        Ok(self.score_unchecked(x, y))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64], y: usize) -> Vec<f64> {
        let fwd = self.forward(x);
        let lp = log_softmax(&fwd.logits);
        let v: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(k, l)| if k == y { 1.0 } else { 0.0 } - l.exp())
            .collect();
        let mut g = vec![0.0; self.dim()];
        self.backward(x, &fwd, &v, 1.0, &mut g);
        g
    }

    pub fn score_norm(&self, x: &[f64], y: usize) -> Result<f64, ModelError> {
        Ok(norm2(&self.score(x, y)?))
    }

    /// Hessian-vector product of `log p(y|x)` by central differences of the score.
    pub fn logp_hvp(&self, x: &[f64], y: usize, v: &[f64], step: f64) -> Vec<f64> {
        let shifted = |sign: f64| {
            let theta: Vec<f64> = self
                .theta
                .iter()
                .zip(v)
                .map(|(t, vi)| t + sign * step * vi)
                .collect();
            self.with_theta(theta).score_unchecked(x, y)
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);
        plus.iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect()
    }

    /// Largest absolute eigenvalue of the Hessian of `log p(y|x)`.
    pub fn logp_hessian_opnorm(&self, x: &[f64], y: usize) -> Result<HessianEstimate, ModelError> {
        self.check_input(x)?;
        self.check_class(y)?;
        self.check_dense()?;
        Ok(PowerIteration::default().run(self, x, y, None))
    }
}

pub(crate) fn gram_opnorm(rows: &[Vec<f64>]) -> f64 {
    let k = rows.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(&rows[i], &rows[j]));
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().copied().fold(0.0, f64::max).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final unit iterate; useful as a warm start at nearby parameters.
    pub vector: Vec<f64>,
}

/// Power iteration on finite-difference Hessian-vector products.
///
/// The estimate `|H v|` for unit `v` is nondecreasing in the iteration count
/// for symmetric `H`, so an unconverged value is still a lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub fd_step: f64,
    pub rel_tol: f64,
    pub min_iter: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            rel_tol: 1e-6,
            min_iter: 3,
            max_iter: 1000,
            seed: 0x5eed,
        }
    }
}

impl PowerIteration {
    pub fn start_vector(&self, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut v: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect();
        let n = norm2(&v);
        v.iter_mut().for_each(|a| *a /= n);
        v
    }

    pub fn run(&self, params: &ModelParams, x: &[f64], y: usize, start: Option<&[f64]>) -> HessianEstimate {
        let mut v = match start {
            Some(s) if s.len() == params.dim() && norm2(s) > 0.0 => {
                let n = norm2(s);
                s.iter().map(|a| a / n).collect()
            }
            _ => self.start_vector(params.dim()),
        };
        let mut prev = 0.0;
        for it in 1..=self.max_iter {
            let hv = params.logp_hvp(x, y, &v, self.fd_step);
            let lambda = norm2(&hv);
            if lambda == 0.0 {
                return HessianEstimate {
                    value: 0.0,
                    iterations: it,
                    converged: true,
                    vector: v,
                };
            }
            v = hv.into_iter().map(|a| a / lambda).collect();
            let rel = (lambda - prev).abs() / lambda;
            prev = lambda;
            if it >= self.min_iter && rel < self.rel_tol {
                return HessianEstimate {
                    value: lambda,
                    iterations: it,
                    converged: true,
                    vector: v,
                };
            }
        }
        HessianEstimate {
            value: prev,
            iterations: self.max_iter,
            converged: false,
            vector: v,
        }
    }
}
