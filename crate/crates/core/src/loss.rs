//! Softmax cross-entropy with analytic gradient.

use crate::error::{Error, Result};

/// Returns `(-log softmax(logits)[target], softmax(logits) - onehot(target))`.
///
/// The log-sum-exp is computed with max subtraction so large logits do not
/// overflow.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut probs: Vec<f64> = Vec::with_capacity(logits.len());
    for &z in logits {
        let e = (z - max).exp();
        sum += e;
        probs.push(e);
    }
    let loss = sum.ln() - (logits[target] - max);
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs[target] -= 1.0;
    Ok((loss, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] - (-0.5)).abs() < 1e-12);
        assert!((grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_is_stable() {
        let (loss, _) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn three_class_value() {
        let (loss, _) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((loss - 0.40760596444438).abs() < 1e-6);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, grad) = softmax_cross_entropy(&[0.3, -1.2, 2.5, 0.0], 1).unwrap();
        let s: f64 = grad.iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn target_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0, 0.0], 2).is_err());
    }
}
