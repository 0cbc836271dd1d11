use alloc::vec::Vec;

use super::{ensure_finite, ensure_len};
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension {
            context: "softmax input",
            expected: 1,
            got: 0,
        });
    }
    ensure_finite(logits, "softmax input")?;
    Ok(softmax_unchecked(logits))
}

/// Softmax without input validation; callers guarantee finite, non-empty input.
pub fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension {
            context: "log_softmax input",
            expected: 1,
            got: 0,
        });
    }
    ensure_finite(logits, "log_softmax input")?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
    Ok(logits.iter().map(|&z| z - lse).collect())
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    ensure_finite(p, what)?;
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(alloc::format!("negative probability in {what}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(alloc::format!(
            "{what} sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_simplex(p, "entropy input")?;
    Ok(entropy_unchecked(p))
}

/// Entropy without simplex validation.
pub fn entropy_unchecked(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * libm::log(v))
        .sum();
    h.max(0.0)
}

/// Result of a KL divergence evaluation; support mismatch is reported as
/// `Infinite` instead of an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn value(self) -> f64 {
        match self {
            Divergence::Finite(v) => v,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Divergence::Infinite)
    }
}

/// KL(p ‖ q) in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<Divergence> {
    ensure_len("kl_divergence", p.len(), q.len())?;
    check_simplex(p, "kl p")?;
    check_simplex(q, "kl q")?;
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(Divergence::Infinite);
            }
            total += pi * libm::log(pi / qi);
        }
    }
    Ok(Divergence::Finite(total.max(0.0)))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient of `-ln softmax(z)[label]` with respect to `z`: `p - onehot(label)`.
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}

/// Gradient of `H(softmax(z))` with respect to `z`:
/// `dH/dz_j = -p_j (ln p_j + H)`.
pub fn entropy_gradient(probs: &[f64]) -> Vec<f64> {
    let h = entropy_unchecked(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (libm::log(p) + h) } else { 0.0 })
        .collect()
}
