//! Loss functions returning both the value and its gradient.

use crate::error::{Error, Result};

/// Probabilities entering logarithms are clamped into
/// `[PROB_EPS, 1 - PROB_EPS]` so saturated outputs cannot produce
/// non-finite losses.
pub const PROB_EPS: f64 = 1e-7;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against a class index.
///
/// Returns `(loss, gradient)` with `gradient = softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if c < 2 {
        return Err(Error::Usage(format!(
            "cross-entropy needs at least 2 classes, got {c}"
        )));
    }
    if label >= c {
        return Err(Error::Usage(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum_exp - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Weighted binary cross-entropy on a probability.
///
/// `loss = -weight * (target ln p + (1-target) ln(1-p))` with `p` clamped.
/// Returns `(loss, dloss/dp)`.
pub fn weighted_binary_cross_entropy(
    prob: f64,
    target: bool,
    weight: f64,
) -> Result<(f64, f64)> {
    if weight < 0.0 {
        return Err(Error::Usage(format!("negative BCE weight {weight}")));
    }
    if weight == 0.0 {
        return Ok((0.0, 0.0));
    }
    let p = clamp_prob(prob);
    let (loss, grad) = if target {
        (-weight * p.ln(), -weight / p)
    } else {
        (-weight * (1.0 - p).ln(), weight / (1.0 - p))
    };
    Ok((loss, grad))
}
