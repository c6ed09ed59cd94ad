//! Seeded old/new task generators.

use crate::error::LabError;
use crate::model::{Architecture, Dataset, LabeledExample, SequenceExample};
use crate::numeric::norm2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskFamily {
    /// Class means move by `shift * u_k` with `u_k ~ N(0, I)`.
    GaussianMixtureShift,
    /// Same inputs; labels cycle `k -> k+1 mod K` when `shift > 0`.
    LabelPermutation,
    /// Inputs rotated by angle `shift` in each coordinate pair.
    FeatureRotation,
    /// Bigram transitions mixed toward an alternative chain by `shift` in [0, 1].
    SeqBigramShift,
}

impl TaskFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::GaussianMixtureShift => "gaussian_mixture_shift",
            TaskFamily::LabelPermutation => "label_permutation",
            TaskFamily::FeatureRotation => "feature_rotation",
            TaskFamily::SeqBigramShift => "seq_bigram_shift",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TaskFamily::GaussianMixtureShift,
            TaskFamily::LabelPermutation,
            TaskFamily::FeatureRotation,
            TaskFamily::SeqBigramShift,
        ]
        .into_iter()
        .find(|f| f.name() == s)
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, TaskFamily::SeqBigramShift)
    }
}

/// One side of a task pair: sampling seed plus the family's shift parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPair {
    pub family: TaskFamily,
    /// Feature dimension (labeled families).
    pub features: usize,
    /// Number of classes, or vocabulary size for sequences.
    pub classes: usize,
    /// Tokens per sequence (sequence family).
    pub seq_len: usize,
    /// Seeds the shared structure (class means, transition matrices).
    pub world_seed: u64,
    pub separation: f64,
    pub noise: f64,
    pub old: GeneratorSpec,
    pub new: GeneratorSpec,
    pub old_train_size: usize,
    pub holdout_size: usize,
    pub train_size: usize,
    pub eval_size: usize,
    /// Inputs longer than this are projected onto the ball of this radius.
    pub input_cap: f64,
}

impl Default for TaskPair {
    fn default() -> Self {
        Self::reference()
    }
}

/// Materialised datasets of a task pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    /// Old-task data used only for pretraining.
    pub old_train: Dataset,
    /// Held-out old-task set on which forgetting is measured.
    pub old_holdout: Dataset,
    /// Fine-tuning set.
    pub new_train: Dataset,
    /// New-task evaluation set.
    pub new_eval: Dataset,
}

impl TaskPair {
    /// The reference continual task: a 5-class, 20-dimensional Gaussian
    /// mixture whose class means shift for the new task.
    pub fn reference() -> Self {
        Self {
            family: TaskFamily::GaussianMixtureShift,
            features: 20,
            classes: 5,
            seq_len: 12,
            world_seed: 2024,
            separation: 1.0,
            noise: 1.0,
            old: GeneratorSpec { seed: 11, shift: 0.0 },
            new: GeneratorSpec { seed: 23, shift: 1.0 },
            old_train_size: 1024,
            holdout_size: 256,
            train_size: 512,
            eval_size: 256,
            input_cap: 12.0,
        }
    }

    pub fn default_arch(&self) -> Architecture {
        if self.family.is_sequence() {
            Architecture::SeqLinear {
                vocab: self.classes,
                context: 2,
            }
        } else {
            Architecture::LinearSoftmax {
                classes: self.classes,
                features: self.features,
            }
        }
    }

    /// Checks that `arch` consumes this task's data.
    pub fn check_arch(&self, arch: &Architecture) -> Result<(), LabError> {
        let ok = match *arch {
            Architecture::SeqLinear { vocab, .. } => self.family.is_sequence() && vocab == self.classes,
            Architecture::LinearSoftmax { classes, features } | Architecture::Mlp2 { classes, features, .. } => {
                !self.family.is_sequence() && classes == self.classes && features == self.features
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Config(format!(
                "architecture `{}` does not match task `{}`",
                arch.describe(),
                self.family.name()
            )))
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        if self.old == self.new {
            return bad("old and new generators must differ in seed or shift");
        }
        if self.classes < 2 {
            return bad("task.classes must be at least 2");
        }
        if !self.family.is_sequence() && self.features == 0 {
            return bad("task.features must be at least 1");
        }
        if self.family.is_sequence() && self.seq_len == 0 {
            return bad("task.seq_len must be at least 1");
        }
        if [self.old_train_size, self.holdout_size, self.train_size, self.eval_size].contains(&0) {
            return bad("dataset sizes must be at least 1");
        }
        if !(self.noise >= 0.0 && self.separation >= 0.0 && self.input_cap > 0.0) {
            return bad("noise and separation must be nonnegative, input_cap positive");
        }
        if !(self.old.shift.is_finite() && self.new.shift.is_finite()) {
            return bad("shift must be finite");
        }
        if self.family == TaskFamily::SeqBigramShift
            && !((0.0..=1.0).contains(&self.old.shift) && (0.0..=1.0).contains(&self.new.shift))
        {
            return bad("bigram shift must lie in [0, 1]");
        }
        Ok(())
    }

    /// Seeds and family, used to refuse comparisons across different tasks.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}:w{}:o{}/{}:n{}/{}",
            self.family.name(),
            self.world_seed,
            self.old.seed,
            self.old.shift,
            self.new.seed,
            self.new.shift
        )
    }

    pub fn materialize(&self) -> Result<TaskData, LabError> {
        self.validate()?;
        let world = World::new(self);
        let draw = |spec: &GeneratorSpec, stream: u64, n: usize| -> Dataset {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream);
            world.sample(self, spec.shift, n, &mut rng)
        };
        Ok(TaskData {
            old_train: draw(&self.old, 1, self.old_train_size),
            old_holdout: draw(&self.old, 2, self.holdout_size),
            new_train: draw(&self.new, 3, self.train_size),
            new_eval: draw(&self.new, 4, self.eval_size),
        })
    }
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        })
        .collect()
}

fn dirichlet_row(n: usize, conc: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive concentration");
    let w: Vec<f64> = (0..n).map(|_| g.sample(rng).max(1e-300)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn sample_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

struct World {
    means: Vec<Vec<f64>>,
    shift_dirs: Vec<Vec<f64>>,
    bigram: Vec<Vec<f64>>,
    bigram_alt: Vec<Vec<f64>>,
}

impl World {
    fn new(task: &TaskPair) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(task.world_seed);
        let k = task.classes;
        if task.family.is_sequence() {
            let bigram = (0..k).map(|_| dirichlet_row(k, 0.3, &mut rng)).collect();
            let bigram_alt = (0..k).map(|_| dirichlet_row(k, 0.3, &mut rng)).collect();
            return Self {
                means: Vec::new(),
                shift_dirs: Vec::new(),
                bigram,
                bigram_alt,
            };
        }
        let d = task.features;
        let means = (0..k)
            .map(|_| normal_vec(d, &mut rng).into_iter().map(|v| v * task.separation).collect())
            .collect();
        let shift_dirs = (0..k).map(|_| normal_vec(d, &mut rng)).collect();
        Self {
            means,
            shift_dirs,
            bigram: Vec::new(),
            bigram_alt: Vec::new(),
        }
    }

    fn sample(&self, task: &TaskPair, shift: f64, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        if task.family.is_sequence() {
            let k = task.classes;
            let rows: Vec<Vec<f64>> = self
                .bigram
                .iter()
                .zip(&self.bigram_alt)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - shift) * x + shift * y).collect())
                .collect();
            let seqs = (0..n)
                .map(|_| {
                    let mut toks = vec![rng.random_range(0..k)];
                    while toks.len() < task.seq_len {
                        let prev = *toks.last().unwrap();
                        toks.push(sample_categorical(&rows[prev], rng));
                    }
                    SequenceExample::new(toks, k).expect("tokens in range")
                })
                .collect();
            return Dataset::Sequence(seqs);
        }
        let k = task.classes;
        let examples = (0..n)
            .map(|_| {
                let label = rng.random_range(0..k);
                let noise = normal_vec(task.features, rng);
                let mut x: Vec<f64> = self.means[label]
                    .iter()
                    .zip(&noise)
                    .map(|(m, z)| m + task.noise * z)
                    .collect();
                let mut target = label;
                match task.family {
                    TaskFamily::GaussianMixtureShift => {
                        for (xi, u) in x.iter_mut().zip(&self.shift_dirs[label]) {
                            *xi += shift * u;
                        }
                    }
                    TaskFamily::LabelPermutation => {
                        if shift > 0.0 {
                            target = (label + 1) % k;
                        }
                    }
                    TaskFamily::FeatureRotation => {
                        let (s, c) = shift.sin_cos();
                        for pair in x.chunks_exact_mut(2) {
                            let (a, b) = (pair[0], pair[1]);
                            pair[0] = c * a - s * b;
                            pair[1] = s * a + c * b;
                        }
                    }
                    TaskFamily::SeqBigramShift => unreachable!(),
                }
                let nrm = norm2(&x);
                if nrm > task.input_cap {
                    let f = task.input_cap / nrm;
                    x.iter_mut().for_each(|v| *v *= f);
                }
                LabeledExample::with_label(x, k, target).expect("finite sample")
            })
            .collect();
        Dataset::Labeled(examples)
    }
}
