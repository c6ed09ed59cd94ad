//! Small softmax networks with analytic derivatives.
//!
//! Three architectures share one flat parameter vector layout:
//!
//! | arch             | blocks (in order)                          |
//! |------------------|--------------------------------------------|
//! | `linear_softmax` | `W` (K x d, row-major), `b` (K)            |
//! | `mlp2`           | `W1` (h x d), `b1` (h), `W2` (K x h), `b2` (K) |
//! | `seq_linear`     | `W` (V x cV), `b` (V)                      |
//!
//! The hidden activation of `mlp2` is `tanh`, whose derivatives satisfy
//! `|tanh'| <= 1` and `|tanh''| <= 4 / (3 sqrt 3)`.
//!
//! `seq_linear` predicts token `t` from the concatenated one-hot encoding of
//! the `c` preceding tokens; missing positions at the start of a sequence
//! encode as all zeros.

mod curvature;
mod data;
pub mod io;
mod kernel;

pub use curvature::{HessianEstimate, PowerIteration};
pub use data::{Batch, Dataset, LabeledExample, SequenceExample};

use crate::error::ModelError;
use crate::numeric::norm2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Range;

/// Dense Jacobian and Hessian paths refuse parameter vectors longer than this.
pub const DENSE_PARAM_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    LinearSoftmax { classes: usize, features: usize },
    Mlp2 {
        classes: usize,
        features: usize,
        hidden: usize,
    },
    SeqLinear { vocab: usize, context: usize },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::LinearSoftmax { .. } => "linear_softmax",
            Architecture::Mlp2 { .. } => "mlp2",
            Architecture::SeqLinear { .. } => "seq_linear",
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::LinearSoftmax { classes, .. } | Architecture::Mlp2 { classes, .. } => {
                classes
            }
            Architecture::SeqLinear { vocab, .. } => vocab,
        }
    }

    /// Length of the dense feature vector the network consumes.
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::LinearSoftmax { features, .. } | Architecture::Mlp2 { features, .. } => {
                features
            }
            Architecture::SeqLinear { vocab, context } => vocab * context,
        }
    }

    pub fn param_dim(&self) -> usize {
        let k = self.classes();
        let d = self.input_dim();
        match *self {
            Architecture::Mlp2 { hidden, .. } => hidden * d + hidden + k * hidden + k,
            _ => k * d + k,
        }
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, Architecture::SeqLinear { .. })
    }

    /// Named parameter blocks and their ranges in the flat vector.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        let k = self.classes();
        let d = self.input_dim();
        match *self {
            Architecture::Mlp2 { hidden: h, .. } => {
                let w1 = 0..h * d;
                let b1 = w1.end..w1.end + h;
                let w2 = b1.end..b1.end + k * h;
                let b2 = w2.end..w2.end + k;
                vec![("W1", w1), ("b1", b1), ("W2", w2), ("b2", b2)]
            }
            _ => vec![("W", 0..k * d), ("b", k * d..k * d + k)],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            Architecture::LinearSoftmax { classes, features } => classes >= 2 && features >= 1,
            Architecture::Mlp2 {
                classes,
                features,
                hidden,
            } => classes >= 2 && features >= 1 && hidden >= 1,
            Architecture::SeqLinear { vocab, context } => vocab >= 2 && context >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::KindMismatch("degenerate architecture shape"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.param_dim()],
        }
    }

    pub fn from_vec(arch: Architecture, theta: Vec<f64>) -> Result<Self, ModelError> {
        if theta.len() != arch.param_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: arch.param_dim(),
                got: theta.len(),
            });
        }
        Ok(Self { arch, theta })
    }

    /// Seeded initialisation: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch);
        let d = arch.input_dim();
        for (name, range) in arch.blocks() {
            let fan_in = match (name, arch) {
                ("W2", Architecture::Mlp2 { hidden, .. }) => hidden,
                ("W" | "W1", _) => d,
                _ => continue,
            };
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.theta[range] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = s * z;
            }
        }
        p
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.arch
            .blocks()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| &self.theta[r])
    }

    /// Copy with a different parameter vector of the same architecture.
    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), self.theta.len());
        Self {
            arch: self.arch,
            theta,
        }
    }
}

#[cfg(test)]
mod tests;
