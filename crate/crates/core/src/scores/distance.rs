//! Class-conditional distances: Mahalanobis on features, KL-Matching on softmax outputs.

use nalgebra::{DMatrix, DVector};

use super::logit::softmax;
use crate::error::{Error, Result};

/// Floor applied to template probabilities before taking logs.
pub const KL_FLOOR: f64 = 1e-12;

/// `−min_c (h−μ_c)ᵀ Σ† (h−μ_c)` with `class_means` as `C x D` rows.
pub fn mahalanobis(class_means: &DMatrix<f64>, precision: &DMatrix<f64>, h: &DVector<f64>) -> f64 {
    let best = (0..class_means.nrows())
        .map(|c| {
            let diff = h - class_means.row(c).transpose();
            diff.dot(&(precision * &diff))
        })
        .fold(f64::INFINITY, f64::min);
    -best
}

/// `Σ_k p_k log(p_k / q_k)` with `0·log 0 = 0` and `q` floored at [`KL_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / qk.max(KL_FLOOR)).ln())
        .sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `C x C` templates: row `c` is the mean softmax of the training samples predicted as `c`.
/// Classes nobody is predicted as get the uniform vector.
pub fn fit_class_probabilities(logits: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = logits.ncols();
    if c < 2 {
        return Err(Error::InvalidParameter(format!("KL-Matching needs at least 2 classes, got {c}")));
    }
    let mut sums = DMatrix::<f64>::zeros(c, c);
    let mut counts = vec![0usize; c];
    for row in logits.row_iter() {
        let l: Vec<f64> = row.iter().copied().collect();
        let p = softmax(&l);
        let k = argmax(&l);
        counts[k] += 1;
        for (j, pj) in p.into_iter().enumerate() {
            sums[(k, j)] += pj;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        let mut row = sums.row_mut(k);
        if n == 0 {
            row.fill(1.0 / c as f64);
        } else {
            row /= n as f64;
        }
    }
    Ok(sums)
}

/// `−min_c KL(softmax(l) ‖ p̄_c)`.
pub fn kl_matching(class_probs: &DMatrix<f64>, logits: &[f64]) -> Result<f64> {
    let p = softmax(logits);
    let best = class_probs
        .row_iter()
        .map(|q| {
            let q: Vec<f64> = q.iter().copied().collect();
            kl_divergence(&p, &q)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(-best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mahalanobis_by_hand() {
        let means = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let s = mahalanobis(&means, &DMatrix::identity(2, 2), &DVector::zeros(2));
        assert_eq!(s, -1.0);
        let at_mean = mahalanobis(&means, &DMatrix::identity(2, 2), &DVector::from_vec(vec![0.0, 2.0]));
        assert_eq!(at_mean, 0.0);
    }

    #[test]
    fn kl_by_hand() {
        let expected = -(0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln());
        let templates = DMatrix::from_element(1, 2, 0.5);
        let s = kl_matching(&templates, &[3f64.ln(), 0.0]).unwrap();
        assert!((s - expected).abs() < 1e-12);
        assert!((s + 0.1308).abs() < 1e-4);
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn unpredicted_classes_get_uniform_templates() {
        let logits = DMatrix::from_row_slice(2, 3, &[5.0, 0.0, 0.0, 4.0, 1.0, 0.0]);
        let t = fit_class_probabilities(&logits).unwrap();
        for k in 1..3 {
            for j in 0..3 {
                assert_eq!(t[(k, j)], 1.0 / 3.0);
            }
        }
        assert!((t.row(0).sum() - 1.0).abs() < 1e-15);
    }
}
