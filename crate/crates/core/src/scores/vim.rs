//! ViM: a virtual logit built from the residual outside the principal subspace.

use crate::error::{Error, Result};

/// Default principal dimension for `D`-dimensional features.
pub fn vim_dimension(dim: usize) -> usize {
    if dim >= 2048 {
        1000
    } else if dim >= 768 {
        512
    } else {
        (dim / 2).max(1)
    }
}

/// `Σ maxlogit / Σ residual` over the training set.
pub fn vim_alpha(max_logits: &[f64], residuals: &[f64]) -> Result<f64> {
    let num: f64 = max_logits.iter().sum();
    let den: f64 = residuals.iter().sum();
    let alpha = num / den;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Degenerate(format!(
            "ViM scale alpha = {num} / {den} is not positive"
        )));
    }
    Ok(alpha)
}

/// Negated softmax mass of the virtual logit `α·residual` appended to `logits`.
pub fn vim_score(logits: &[f64], residual: f64, alpha: f64) -> f64 {
    let l0 = alpha * residual;
    let m = logits.iter().copied().fold(l0, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum::<f64>() + (l0 - m).exp();
    -(l0 - m).exp() / z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_by_hand() {
        assert_eq!(vim_alpha(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 2.0);
        assert!(vim_alpha(&[-1.0], &[1.0]).is_err());
        assert!(vim_alpha(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn zero_residual() {
        let s = vim_score(&[0.0, 0.0], 0.0, 3.0);
        assert!((s + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn larger_alpha_lowers_the_score() {
        assert!(vim_score(&[1.0, 2.0], 0.5, 4.0) < vim_score(&[1.0, 2.0], 0.5, 2.0));
    }

    #[test]
    fn default_dimensions() {
        assert_eq!(vim_dimension(2048), 1000);
        assert_eq!(vim_dimension(768), 512);
        assert_eq!(vim_dimension(64), 32);
    }
}
