//! `|p - q|_2 <= |p - q|_1 <= sqrt(2 KL(q||p)) <= sqrt(2 CE(q, p))`.

use crate::error::VerifyError;

const CHAIN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PinskerChain {
    pub l2: f64,
    pub l1: f64,
    pub kl: f64,
    pub ce: f64,
    pub sqrt_2kl: f64,
    pub sqrt_2ce: f64,
}

impl PinskerChain {
    /// Some class has target mass but zero predicted probability.
    pub fn vacuous(&self) -> bool {
        self.kl.is_infinite()
    }

    pub fn links(&self) -> [f64; 4] {
        [self.l2, self.l1, self.sqrt_2kl, self.sqrt_2ce]
    }

    pub fn holds(&self) -> bool {
        self.links().windows(2).all(|w| w[0] <= w[1] + CHAIN_TOLERANCE)
    }
}

fn check_distribution(name: &str, v: &[f64]) -> Result<(), VerifyError> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(VerifyError::Precondition(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(VerifyError::Precondition(format!("{name} sums to {s}")));
    }
    Ok(())
}

// Near-equal arguments: q - p is exact there, so ln_1p keeps full precision
// where ln(q / p) would lose it to the rounding of the quotient.
fn log_ratio(q: f64, p: f64) -> f64 {
    let r = (q - p) / p;
    if r.abs() < 0.5 {
        r.ln_1p()
    } else {
        (q / p).ln()
    }
}

fn ln(p: f64) -> f64 {
    if p > 0.5 {
        (p - 1.0).ln_1p()
    } else {
        p.ln()
    }
}

/// Prediction `p`, target `q`.
pub fn check_pinsker_chain(p: &[f64], q: &[f64]) -> Result<PinskerChain, VerifyError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(VerifyError::Precondition(format!("lengths {} and {}", p.len(), q.len())));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let (mut l1, mut l2sq, mut kl, mut ce) = (0.0, 0.0, 0.0, 0.0);
    for (&pi, &qi) in p.iter().zip(q) {
        let d = pi - qi;
        l1 += d.abs();
        l2sq += d * d;
        if qi > 0.0 {
            kl += qi * log_ratio(qi, pi);
            ce -= qi * ln(pi);
        }
    }
    // rounding can push a near-zero divergence slightly negative
    let kl = kl.max(0.0);
    Ok(PinskerChain {
        l2: l2sq.sqrt(),
        l1,
        kl,
        ce,
        sqrt_2kl: (2.0 * kl).sqrt(),
        sqrt_2ce: (2.0 * ce).sqrt(),
    })
}
