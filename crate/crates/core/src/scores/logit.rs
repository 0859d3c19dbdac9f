//! Scores computed from logits alone, plus GradNorm.

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = max_logit(logits);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn max_logit(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum softmax probability.
pub fn msp(logits: &[f64]) -> f64 {
    max_logit(&softmax(logits))
}

/// Negative free energy, `log Σ exp(l_c)`.
pub fn energy(logits: &[f64]) -> f64 {
    let m = max_logit(logits);
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// `‖softmax(l) − u‖₁ · ‖h‖₁` with `u` uniform: the L1 norm of the gradient of
/// `KL(u ‖ softmax(Wh + b))` with respect to `W`.
pub fn gradnorm(logits: &[f64], h: &[f64]) -> f64 {
    let u = 1.0 / logits.len() as f64;
    let p_dev: f64 = softmax(logits).iter().map(|p| (p - u).abs()).sum();
    let h_l1: f64 = h.iter().map(|v| v.abs()).sum();
    p_dev * h_l1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert!((msp(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(max_logit(&[1.0, 3.0, 2.0]), 3.0);
        assert!((energy(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(gradnorm(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn large_logits_stay_finite() {
        assert!((energy(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((msp(&[1000.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
