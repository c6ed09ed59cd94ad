use super::Architecture;
use crate::error::{DataError, ModelError};

const NORMALIZATION_TOL: f64 = 1e-12;

fn check_distribution(q: &[f64]) -> Result<(), DataError> {
    let mut sum = 0.0;
    for &v in q {
        if !v.is_finite() || v < 0.0 {
            return Err(DataError::BadProbability(v));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(DataError::NotNormalized(sum));
    }
    Ok(())
}

pub(crate) fn one_hot(k: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

/// A feature vector with a target distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    x: Vec<f64>,
    q: Vec<f64>,
}

impl LabeledExample {
    pub fn new(x: Vec<f64>, q: Vec<f64>) -> Result<Self, DataError> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        check_distribution(&q)?;
        Ok(Self { x, q })
    }

    pub fn with_label(x: Vec<f64>, classes: usize, label: usize) -> Result<Self, DataError> {
        if label >= classes {
            return Err(DataError::TokenOutOfRange {
                token: label,
                vocab: classes,
            });
        }
        Self::new(x, one_hot(classes, label))
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Most probable target class (first on ties).
    pub fn label(&self) -> usize {
        argmax(&self.q)
    }
}

/// Token sequence whose every position is a prediction target.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    tokens: Vec<usize>,
    targets: Vec<Vec<f64>>,
}

impl SequenceExample {
    /// Targets default to the one-hot of each position's token.
    pub fn new(tokens: Vec<usize>, vocab: usize) -> Result<Self, DataError> {
        if tokens.is_empty() {
            return Err(DataError::EmptySequence);
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(DataError::TokenOutOfRange { token: t, vocab });
        }
        let targets = tokens.iter().map(|&t| one_hot(vocab, t)).collect();
        Ok(Self { tokens, targets })
    }

    pub fn with_targets(tokens: Vec<usize>, targets: Vec<Vec<f64>>, vocab: usize) -> Result<Self, DataError> {
        let mut s = Self::new(tokens, vocab)?;
        if targets.len() != s.tokens.len() {
            return Err(DataError::Parse {
                line: 0,
                reason: "one target distribution per position required".into(),
            });
        }
        for q in &targets {
            if q.len() != vocab {
                return Err(DataError::NotNormalized(f64::NAN));
            }
            check_distribution(q)?;
        }
        s.targets = targets;
        Ok(s)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target(&self, t: usize) -> &[f64] {
        &self.targets[t]
    }

    /// Concatenated one-hot encoding of the `context` tokens preceding `t`.
    pub fn position_features(&self, t: usize, vocab: usize, context: usize) -> Vec<f64> {
        let mut x = vec![0.0; vocab * context];
        for slot in 0..context {
            // slot context-1 holds the immediately preceding token
            let back = context - slot;
            if t >= back {
                x[slot * vocab + self.tokens[t - back]] = 1.0;
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub enum Batch<'a> {
    Labeled(Vec<&'a LabeledExample>),
    Sequence(Vec<&'a SequenceExample>),
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Labeled(v) => v.len(),
            Batch::Sequence(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check(&self, arch: &Architecture) -> Result<(), ModelError> {
        if self.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        match (self, arch.is_sequence()) {
            (Batch::Labeled(v), false) => {
                for e in v {
                    if e.x.len() != arch.input_dim() {
                        return Err(ModelError::DimensionMismatch {
                            expected: arch.input_dim(),
                            got: e.x.len(),
                        });
                    }
                    if e.q.len() != arch.classes() {
                        return Err(ModelError::DimensionMismatch {
                            expected: arch.classes(),
                            got: e.q.len(),
                        });
                    }
                }
                Ok(())
            }
            (Batch::Sequence(v), true) => {
                let vocab = arch.classes();
                for s in v {
                    if let Some(&t) = s.tokens.iter().find(|&&t| t >= vocab) {
                        return Err(ModelError::ClassOutOfRange {
                            index: t,
                            classes: vocab,
                        });
                    }
                }
                Ok(())
            }
            _ => Err(ModelError::KindMismatch(arch.name())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Labeled(Vec<LabeledExample>),
    Sequence(Vec<SequenceExample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Labeled(v) => v.len(),
            Dataset::Sequence(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<'_> {
        match self {
            Dataset::Labeled(v) => Batch::Labeled(indices.iter().map(|&i| &v[i]).collect()),
            Dataset::Sequence(v) => Batch::Sequence(indices.iter().map(|&i| &v[i]).collect()),
        }
    }

    pub fn full(&self) -> Batch<'_> {
        match self {
            Dataset::Labeled(v) => Batch::Labeled(v.iter().collect()),
            Dataset::Sequence(v) => Batch::Sequence(v.iter().collect()),
        }
    }

    /// Every prediction point as `(features, target)`; sequences contribute
    /// one item per position.
    pub fn items(&self, arch: &Architecture) -> Vec<(Vec<f64>, Vec<f64>)> {
        match (self, *arch) {
            (Dataset::Labeled(v), _) => v.iter().map(|e| (e.x.clone(), e.q.clone())).collect(),
            (Dataset::Sequence(v), Architecture::SeqLinear { vocab, context }) => v
                .iter()
                .flat_map(|s| {
                    (0..s.len()).map(move |t| {
                        (s.position_features(t, vocab, context), s.targets[t].clone())
                    })
                })
                .collect(),
            (Dataset::Sequence(_), _) => Vec::new(),
        }
    }

    /// Items selected by dataset index (all positions of a selected sequence).
    pub fn items_at(&self, arch: &Architecture, indices: &[usize]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let sub = match self {
            Dataset::Labeled(v) => Dataset::Labeled(indices.iter().map(|&i| v[i].clone()).collect()),
            Dataset::Sequence(v) => {
                Dataset::Sequence(indices.iter().map(|&i| v[i].clone()).collect())
            }
        };
        sub.items(arch)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
