use super::io::*;
use super::*;
use crate::error::DataError;
use crate::numeric::norm2;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LIN: Architecture = Architecture::LinearSoftmax { classes: 4, features: 3 };
const MLP: Architecture = Architecture::Mlp2 { classes: 3, features: 4, hidden: 5 };
const SEQ: Architecture = Architecture::SeqLinear { vocab: 4, context: 2 };

fn random_params(arch: Architecture, rng: &mut ChaCha8Rng) -> ModelParams {
    let theta = (0..arch.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModelParams::from_vec(arch, theta).unwrap()
}

fn random_dist(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut q: Vec<f64> = w.iter().map(|v| v / s).collect();
    let rest: f64 = q[1..].iter().sum();
    q[0] = 1.0 - rest;
    q
}

fn random_labeled(arch: Architecture, n: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledExample> {
    (0..n)
        .map(|_| {
            let x = (0..arch.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            LabeledExample::new(x, random_dist(arch.classes(), rng)).unwrap()
        })
        .collect()
}

fn random_seqs(vocab: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<SequenceExample> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..7);
            SequenceExample::new((0..len).map(|_| rng.random_range(0..vocab)).collect(), vocab).unwrap()
        })
        .collect()
}

/// Softmax without the max shift, with a compensated denominator.
fn naive_probs(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in &e {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    e.iter().map(|v| v / s).collect()
}

fn fd_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let a = f(&t);
            t[i] = orig - h;
            let b = f(&t);
            t[i] = orig;
            (a - b) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff) / norm2(a).max(norm2(b)).max(1e-12)
}

fn assert_fd_gradient(arch: Architecture, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_params(arch, &mut rng);
    let data = match arch {
        Architecture::SeqLinear { vocab, .. } => Dataset::Sequence(random_seqs(vocab, 3, &mut rng)),
        _ => Dataset::Labeled(random_labeled(arch, 4, &mut rng)),
    };
    let batch = data.full();
    let g = p.grad_ce(&batch).unwrap();
    let fd = fd_grad(|t| p.with_theta(t.to_vec()).ce_loss(&batch).unwrap(), p.theta(), 1e-5);
    let e = rel_err(&g, &fd);
    assert!(e < 1e-5, "{} rel err {e}", arch.name());
}

#[test]
fn zero_params_give_uniform_log_probs() {
    let p = ModelParams::zeros(LIN);
    for lp in p.log_probs(&[0.3, -1.0, 2.0]).unwrap() {
        assert!((lp - (0.25f64).ln()).abs() < 1e-15);
    }
}

#[test]
fn equal_logits_two_classes() {
    let arch = Architecture::LinearSoftmax { classes: 2, features: 1 };
    let p = ModelParams::from_vec(arch, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
    let lp = p.log_probs(&[0.0]).unwrap();
    assert_eq!(lp, vec![0.5f64.ln(), 0.5f64.ln()]);
}

#[test]
fn log_probs_match_naive_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for arch in [LIN, MLP] {
        for _ in 0..20 {
            let p = random_params(arch, &mut rng);
            let x: Vec<f64> = (0..arch.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let oracle = naive_probs(&p.logits(&x).unwrap());
            for (a, b) in p.probs(&x).unwrap().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let p = ModelParams::zeros(LIN);
    assert!(matches!(p.log_probs(&[1.0]), Err(ModelError::DimensionMismatch { .. })));
    assert!(ModelParams::from_vec(LIN, vec![0.0; 3]).is_err());
    let seqs = [SequenceExample::new(vec![0, 1], 4).unwrap()];
    assert!(matches!(
        p.ce_loss(&Batch::Sequence(seqs.iter().collect())),
        Err(ModelError::KindMismatch(_))
    ));
    assert!(matches!(p.ce_loss(&Batch::Labeled(vec![])), Err(ModelError::EmptyBatch)));
}

#[test]
fn ce_loss_special_cases() {
    // uniform predictive, one-hot targets -> log K
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<LabeledExample> = (0..5)
        .map(|i| {
            let x = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            LabeledExample::with_label(x, 4, i % 4).unwrap()
        })
        .collect();
    let loss = ModelParams::zeros(LIN).ce_loss(&Batch::Labeled(data.iter().collect())).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-14);

    // q = p exactly -> entropy of q
    let q = vec![0.25; 4];
    let e = LabeledExample::new(vec![0.0; 3], q).unwrap();
    let loss = ModelParams::zeros(LIN).ce_loss(&Batch::Labeled(vec![&e])).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-14);

    // prediction concentrated on the label -> zero loss
    let arch = Architecture::LinearSoftmax { classes: 2, features: 1 };
    let p = ModelParams::from_vec(arch, vec![0.0, 0.0, 800.0, -800.0]).unwrap();
    let e = LabeledExample::with_label(vec![1.0], 2, 0).unwrap();
    assert_eq!(p.ce_loss(&Batch::Labeled(vec![&e])).unwrap(), 0.0);
}

#[test]
fn ce_loss_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_params(MLP, &mut rng);
    let data = random_labeled(MLP, 9, &mut rng);
    let mut total = 0.0;
    for e in &data {
        let z = p.logits(e.x()).unwrap();
        let probs = naive_probs(&z);
        total -= e.q().iter().zip(&probs).map(|(q, p)| q * p.ln()).sum::<f64>();
    }
    let got = p.ce_loss(&Batch::Labeled(data.iter().collect())).unwrap();
    assert!((got - total / 9.0).abs() < 1e-12);

    // two-level averaging for sequences
    let sp = random_params(SEQ, &mut rng);
    let seqs = random_seqs(4, 4, &mut rng);
    let mut outer = 0.0;
    for s in &seqs {
        let mut inner = 0.0;
        for t in 0..s.len() {
            let z = sp.logits(&s.position_features(t, 4, 2)).unwrap();
            inner -= naive_probs(&z)[s.tokens()[t]].ln();
        }
        outer += inner / s.len() as f64;
    }
    let got = sp.ce_loss(&Batch::Sequence(seqs.iter().collect())).unwrap();
    assert!((got - outer / 4.0).abs() < 1e-12);
}

#[test]
fn gradient_closed_form_two_classes() {
    let arch = Architecture::LinearSoftmax { classes: 2, features: 1 };
    let p = ModelParams::zeros(arch);
    let e = LabeledExample::with_label(vec![1.0], 2, 0).unwrap();
    let g = p.grad_ce(&Batch::Labeled(vec![&e])).unwrap();
    assert_eq!(g, vec![-0.5, 0.5, -0.5, 0.5]);
}

#[test]
fn gradient_vanishes_when_prediction_matches_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_params(LIN, &mut rng);
    let data: Vec<LabeledExample> = (0..4)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut q = p.probs(&x).unwrap();
            let rest: f64 = q[1..].iter().sum();
            q[0] = 1.0 - rest;
            LabeledExample::new(x, q).unwrap()
        })
        .collect();
    let g = p.grad_ce(&Batch::Labeled(data.iter().collect())).unwrap();
    assert!(norm2(&g) < 1e-14);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        for arch in [LIN, MLP, SEQ] {
            assert_fd_gradient(arch, 100 + seed);
        }
    }
}

#[test]
fn linear_gradient_factorises_through_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_params(LIN, &mut rng);
    let data = random_labeled(LIN, 6, &mut rng);
    let g = p.grad_ce(&Batch::Labeled(data.iter().collect())).unwrap();
    let mut assembled = DMatrix::<f64>::zeros(p.dim(), 1);
    for e in &data {
        let j = p.logit_jacobian(e.x()).unwrap();
        let resid: Vec<f64> = p.probs(e.x()).unwrap().iter().zip(e.q()).map(|(a, b)| a - b).collect();
        assembled += j.transpose() * DMatrix::from_column_slice(4, 1, &resid);
    }
    assembled /= data.len() as f64;
    for (a, b) in g.iter().zip(assembled.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn linear_jacobian_norm_via_svd() {
    let p = ModelParams::zeros(LIN);
    let x = [0.6, 0.0, 0.8];
    let j = p.logit_jacobian(&x).unwrap();
    let svd = j.svd(false, false);
    let top = svd.singular_values.max();
    assert!((top - 2f64.sqrt()).abs() < 1e-12);
    assert!((p.jacobian_opnorm(&x).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(p.jacobian_opnorm(&[0.0; 3]).unwrap(), 1.0);
}

#[test]
fn generic_gram_path_agrees_with_linear_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_params(LIN, &mut rng);
    let x = [0.3, -1.2, 0.7];
    let generic = super::curvature::gram_opnorm(&p.jacobian_rows(&x));
    assert!((generic - p.jacobian_opnorm(&x).unwrap()).abs() < 1e-12);
}

#[test]
fn mlp_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_params(MLP, &mut rng);
    let x = [0.5, -0.3, 1.1, 0.2];
    let j = p.logit_jacobian(&x).unwrap();
    for r in 0..3 {
        let fd = fd_grad(|t| p.with_theta(t.to_vec()).logits(&x).unwrap()[r], p.theta(), 1e-5);
        for c in 0..p.dim() {
            assert!((j[(r, c)] - fd[c]).abs() < 1e-6);
        }
    }
    let svd_top = j.clone().svd(false, false).singular_values.max();
    assert!((p.jacobian_opnorm(&x).unwrap() - svd_top).abs() < 1e-10);
}

#[test]
fn dense_paths_respect_the_cap() {
    let big = Architecture::LinearSoftmax { classes: 10, features: 600 };
    let p = ModelParams::zeros(big);
    let x = vec![0.0; 600];
    assert!(matches!(p.logit_jacobian(&x), Err(ModelError::TooLarge { .. })));
    assert!(matches!(p.logp_hessian_opnorm(&x, 0), Err(ModelError::TooLarge { .. })));
    // gradient and norm paths still work
    assert!(p.jacobian_opnorm(&x).is_ok());
}

/// Exact Hessian of log p(y|x) for linear softmax: -(diag(p) - p p^T) kron (x~ x~^T)
/// laid out in the crate's W-then-b parameter order.
fn linear_exact_hessian(p: &ModelParams, x: &[f64]) -> DMatrix<f64> {
    let k = p.arch().classes();
    let d = x.len();
    let probs = p.probs(x).unwrap();
    let idx = |class: usize, j: usize| if j < d { class * d + j } else { k * d + class };
    let aug = |j: usize| if j < d { x[j] } else { 1.0 };
    let mut h = DMatrix::zeros(p.dim(), p.dim());
    for a in 0..k {
        for b in 0..k {
            let cov = if a == b { probs[a] } else { 0.0 } - probs[a] * probs[b];
            for i in 0..=d {
                for j in 0..=d {
                    h[(idx(a, i), idx(b, j))] = -cov * aug(i) * aug(j);
                }
            }
        }
    }
    h
}

fn top_abs_eig(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn linear_hessian_at_zero_two_classes() {
    let arch = Architecture::LinearSoftmax { classes: 2, features: 2 };
    let p = ModelParams::zeros(arch);
    let x = [0.6, 0.8];
    let exact = top_abs_eig(linear_exact_hessian(&p, &x));
    assert!((exact - 1.0).abs() < 1e-12);
    let est = p.logp_hessian_opnorm(&x, 0).unwrap();
    assert!(est.converged);
    assert!((est.value - 1.0).abs() < 1e-6, "{}", est.value);
}

#[test]
fn linear_hessian_power_iteration_matches_kronecker_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let p = random_params(LIN, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let exact = top_abs_eig(linear_exact_hessian(&p, &x));
        let est = p.logp_hessian_opnorm(&x, 1).unwrap();
        assert!((est.value - exact).abs() <= 1e-3 * exact, "{} vs {exact}", est.value);
    }
}

#[test]
fn mlp_hessian_power_iteration_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(MLP, &mut rng);
    assert!(p.dim() <= 200);
    let x = [0.4, -0.9, 0.3, 1.2];
    let y = 2;
    // dense Hessian from finite differences of the score, column by column
    let n = p.dim();
    let mut h = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = p.logp_hvp(&x, y, &e, 1e-4);
        for r in 0..n {
            h[(r, c)] = col[r];
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    let exact = top_abs_eig(sym);
    let est = p.logp_hessian_opnorm(&x, y).unwrap();
    assert!((est.value - exact).abs() <= 0.05 * exact, "{} vs {exact}", est.value);
}

#[test]
fn saturated_prediction_has_flat_log_prob() {
    let arch = Architecture::LinearSoftmax { classes: 2, features: 1 };
    let p = ModelParams::from_vec(arch, vec![0.0, 0.0, 800.0, -800.0]).unwrap();
    assert_eq!(p.score_norm(&[1.0], 0).unwrap(), 0.0);
    let est = p.logp_hessian_opnorm(&[1.0], 0).unwrap();
    assert_eq!(est.value, 0.0);
}

#[test]
fn score_norm_at_zero_params() {
    let arch = Architecture::LinearSoftmax { classes: 2, features: 2 };
    let p = ModelParams::zeros(arch);
    let x = [0.6, 0.8];
    let s = p.score_norm(&x, 0).unwrap();
    // |e_y - p| = 1/sqrt 2, times |[x; 1]| = sqrt 2
    assert!((s - 1.0).abs() < 1e-15);
    let fd = fd_grad(|t| p.with_theta(t.to_vec()).log_probs(&x).unwrap()[0], p.theta(), 1e-5);
    assert!((norm2(&fd) - s).abs() < 1e-9);
}

#[test]
fn score_norm_bounded_by_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for arch in [LIN, MLP] {
        for _ in 0..50 {
            let p = random_params(arch, &mut rng);
            let x: Vec<f64> = (0..arch.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..arch.classes());
            let s = p.score_norm(&x, y).unwrap();
            assert!(s <= 2f64.sqrt() * p.jacobian_opnorm(&x).unwrap() + 1e-8);
        }
    }
}

#[test]
fn sequence_jensen_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = random_params(SEQ, &mut rng);
        let seqs = random_seqs(4, 5, &mut rng);
        let batch = Batch::Sequence(seqs.iter().collect());
        let (loss, g) = p.loss_and_grad(&batch).unwrap();
        let terms = p.example_terms(&batch, true).unwrap();
        let mean_norm = terms.iter().map(|(_, g)| norm2(g)).sum::<f64>() / terms.len() as f64;
        let max_m = Dataset::Sequence(seqs.clone())
            .items(&SEQ)
            .iter()
            .map(|(x, _)| p.jacobian_opnorm(x).unwrap())
            .fold(0.0, f64::max);
        assert!(norm2(&g) <= mean_norm + 1e-12);
        assert!(mean_norm <= (2.0 * loss).sqrt() * max_m + 1e-12);
    }
}

#[test]
fn position_features_encode_preceding_tokens() {
    let s = SequenceExample::new(vec![2, 0, 3], 4).unwrap();
    assert_eq!(s.position_features(0, 4, 2), vec![0.0; 8]);
    // t=1: only the previous token (2) in the last slot
    assert_eq!(s.position_features(1, 4, 2), vec![0., 0., 0., 0., 0., 0., 1., 0.]);
    // t=2: tokens 2 then 0
    assert_eq!(s.position_features(2, 4, 2), vec![0., 0., 1., 0., 1., 0., 0., 0.]);
    assert!(SequenceExample::new(vec![], 4).is_err());
    assert!(SequenceExample::new(vec![4], 4).is_err());
}

#[test]
fn labeled_example_validation() {
    assert!(LabeledExample::new(vec![0.0], vec![0.5, 0.6]).is_err());
    assert!(LabeledExample::new(vec![0.0], vec![-0.1, 1.1]).is_err());
    assert!(LabeledExample::new(vec![f64::NAN], vec![0.5, 0.5]).is_err());
    assert!(LabeledExample::with_label(vec![0.0], 2, 2).is_err());
}

#[test]
fn init_is_seeded_and_blocks_are_named() {
    assert_eq!(ModelParams::init(MLP, 3), ModelParams::init(MLP, 3));
    assert_ne!(ModelParams::init(MLP, 3), ModelParams::init(MLP, 4));
    let p = ModelParams::init(MLP, 3);
    assert_eq!(p.block("b1").unwrap(), &[0.0; 5]);
    assert_eq!(p.block("W2").unwrap().len(), 15);
    assert_eq!(MLP.param_dim(), 5 * 4 + 5 + 3 * 5 + 3);
}

#[test]
fn dataset_and_checkpoint_formats() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = random_labeled(LIN, 5, &mut rng);
    let text = write_labeled_csv(&data);
    assert!(text.starts_with("x0,x1,x2,q0,q1,q2,q3\n"));
    assert_eq!(read_labeled_csv(&text).unwrap(), data);
    assert!(matches!(read_labeled_csv("x0,q0,q1\n1,0.5\n"), Err(DataError::Parse { line: 2, .. })));

    let seqs = random_seqs(4, 3, &mut rng);
    assert_eq!(read_sequences(&write_sequences(&seqs), 4).unwrap(), seqs);
    assert!(matches!(read_sequences("0 1\n0 9\n", 4), Err(DataError::Parse { line: 2, .. })));

    let p = ModelParams::init(MLP, 1);
    let text = write_checkpoints(&MLP, [(0, p.theta()), (3, p.theta())]);
    let (arch, snaps) = read_checkpoints(&text).unwrap();
    assert_eq!(arch, MLP);
    assert_eq!(snaps[1], (3, p.theta().to_vec()));
    assert!(read_checkpoints("finch-checkpoint v1\narch=mlp2 classes=3\n").is_err());
}

proptest! {
    #[test]
    fn probabilities_normalise(seed in 0u64..1000, scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for arch in [LIN, MLP, SEQ] {
            let mut p = random_params(arch, &mut rng);
            p.theta_mut().iter_mut().for_each(|v| *v *= scale);
            let x: Vec<f64> = (0..arch.input_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s: f64 = p.probs(&x).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_text_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 18)) {
        let arch = Architecture::LinearSoftmax { classes: 3, features: 5 };
        let text = write_checkpoints(&arch, [(7, &vals[..])]);
        let (_, snaps) = read_checkpoints(&text).unwrap();
        prop_assert_eq!(&snaps[0].1, &vals);
    }
}

