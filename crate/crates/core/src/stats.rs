//! Class means and the within/between/total covariance decomposition.
//!
//! All covariances use the population divisor `1/n`, so `Σ_T = Σ_B + Σ_W`
//! holds exactly up to rounding.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ingest::FeatureSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    pub global_mean: DVector<f64>,
    /// `C x D`, row `c` is the mean of class `c`.
    pub class_means: DMatrix<f64>,
    pub class_counts: Vec<usize>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma_t: DMatrix<f64>,
}

impl ClassStatistics {
    pub fn num_classes(&self) -> usize {
        self.class_means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.class_means.ncols()
    }

    pub fn num_samples(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn class_mean(&self, c: usize) -> DVector<f64> {
        self.class_means.row(c).transpose()
    }

    /// `D x C` matrix whose columns are `μ_c − μ_G`.
    pub fn centered_means(&self) -> DMatrix<f64> {
        let mut m = self.class_means.transpose();
        for mut col in m.column_iter_mut() {
            col -= &self.global_mean;
        }
        m
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Gram matrix `AᵀA / n` of the rows of `a`.
fn scatter(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut s = a.tr_mul(a);
    s /= n as f64;
    symmetrize(&mut s);
    s
}

/// Means and covariance decomposition of a labelled feature set.
///
/// Every class `0..C` must have at least one sample.
pub fn class_statistics(fs: &FeatureSet) -> Result<ClassStatistics> {
    let labels = fs.labels().ok_or(Error::MissingLabels)?;
    let c = fs.num_classes().unwrap_or(0);
    let x = fs.features();
    let (n, d) = x.shape();

    let mut sums = DMatrix::<f64>::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let mut row = sums.row_mut(l);
        row += x.row(i);
    }
    if let Some(empty) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let mut class_means = sums;
    for (k, mut row) in counts.iter().zip(class_means.row_iter_mut()) {
        row /= *k as f64;
    }
    let global_mean = x.row_mean().transpose();

    let mut within = x.clone();
    let mut total = x.clone();
    for (i, &l) in labels.iter().enumerate() {
        let mut row = within.row_mut(i);
        row -= class_means.row(l);
        let mut row = total.row_mut(i);
        row -= global_mean.transpose();
    }
    let sigma_w = scatter(&within, n);
    let sigma_t = scatter(&total, n);

    // √n_c (μ_c − μ_G) rows give Σ_B as a Gram matrix
    let mut between = class_means.clone();
    for (k, mut row) in counts.iter().zip(between.row_iter_mut()) {
        row -= global_mean.transpose();
        row *= (*k as f64).sqrt();
    }
    let sigma_b = scatter(&between, n);

    Ok(ClassStatistics {
        global_mean,
        class_means,
        class_counts: counts,
        sigma_w,
        sigma_b,
        sigma_t,
    })
}

/// Relative singular-value cutoff used by [`pseudo_inverse`].
pub fn pinv_rtol(rows: usize, cols: usize) -> f64 {
    1e-12 * rows.max(cols) as f64
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, values sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `rows x k` with `k = min(rows, cols)`.
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    /// `cols x k`.
    pub v: DMatrix<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD of a matrix with at least as many rows as columns.
fn jacobi_tall(a: &DMatrix<f64>) -> Result<Svd> {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNonConvergence);
    }
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let mut u = DMatrix::zeros(a.nrows(), n);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
    }
    Ok(Svd {
        u,
        s: DVector::from_iterator(n, order.iter().map(|&j| norms[j])),
        v: DMatrix::from_fn(n, n, |i, k| v[(i, order[k])]),
    })
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Columns of `u` belonging to zero singular values are left as zeros.
pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("SVD input".into()));
    }
    if a.nrows() >= a.ncols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

/// Moore–Penrose pseudoinverse via SVD.
///
/// Singular values below `1e-12 · max(rows, cols) · σ_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let f = svd(m)?;
    let cutoff = pinv_rtol(rows, cols) * f.s.max();
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in f.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_k u_kᵀ / s
            out.ger(1.0 / s, &f.v.column(k), &f.u.column(k), 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(rows: &[[f64; 2]], labels: &[i64]) -> FeatureSet {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        FeatureSet::new(
            "t",
            DMatrix::from_row_slice(rows.len(), 2, &flat),
            None,
            Some(labels.to_vec()),
            None,
        )
        .unwrap()
    }

    #[test]
    fn collapsed_classes() {
        let cs = class_statistics(&labelled(
            &[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]],
            &[0, 0, 1, 1],
        ))
        .unwrap();
        assert_eq!(cs.sigma_w, DMatrix::zeros(2, 2));
        assert_eq!(cs.global_mean, DVector::zeros(2));
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((&cs.sigma_b - expected).amax() < 1e-15);
    }

    #[test]
    fn single_class_uses_population_divisor() {
        // (1/2)[(−1)² + 1²] = 1 on the first axis
        let cs = class_statistics(&labelled(&[[0.0, 0.0], [2.0, 0.0]], &[0, 0])).unwrap();
        assert_eq!(cs.global_mean, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(cs.sigma_b, DMatrix::zeros(2, 2));
        assert_eq!(cs.sigma_w, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));
    }

    #[test]
    fn empty_class_is_an_error() {
        let fs = FeatureSet::new(
            "t",
            DMatrix::from_element(2, 2, 1.0),
            None,
            Some(vec![0, 0]),
            Some(2),
        )
        .unwrap();
        assert!(matches!(class_statistics(&fs), Err(Error::EmptyClass(1))));
        let unlabelled = FeatureSet::from_features("t", DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(matches!(class_statistics(&unlabelled), Err(Error::MissingLabels)));
    }

    #[test]
    fn svd_reconstructs_rank_deficient_input() {
        let l = DMatrix::from_row_slice(4, 2, &[-1.9, 2.4, 0.6, 0.0, -2.7, -1.4, 1.2, 0.8]);
        let r = DMatrix::from_row_slice(2, 3, &[0.3, -1.9, 0.8, -1.1, -1.1, -2.0]);
        for a in [&l * &r, (&l * &r).transpose()] {
            let f = svd(&a).unwrap();
            let rec = &f.u * DMatrix::from_diagonal(&f.s) * f.v.transpose();
            assert!((rec - &a).amax() < 1e-13);
            assert!(f.s[2] < 1e-14 && f.s[1] > 1.0);
            assert!(f.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let p = pseudo_inverse(&m).unwrap();
        assert_eq!(p, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0])));
    }

    #[test]
    fn pinv_identity() {
        let p = pseudo_inverse(&DMatrix::identity(4, 4)).unwrap();
        assert!((p - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn pinv_rectangular_shape() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let p = pseudo_inverse(&m).unwrap();
        assert_eq!(p.shape(), (3, 2));
        assert!((&m * &p - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }
}
