//! PCA principal subspace of ID training features.
//!
//! The subspace is fitted on mean-centred features. Whether the mean is
//! subtracted again when projecting is controlled by `center_at_projection`;
//! NECO projects raw features (flag off), ViM projects centred ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ingest::FeatureSet;

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalSubspace {
    pub mean: DVector<f64>,
    /// `D x d`, orthonormal columns sorted by decreasing eigenvalue.
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub total_variance: f64,
    pub center_at_projection: bool,
    /// Set when the fit covariance was identically zero.
    pub degenerate: bool,
}

/// Makes the largest-magnitude entry of every column positive (ties: lowest index).
fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// `1/n` covariance of `x` about its column means.
pub fn covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.tr_mul(&centered);
    cov /= n as f64;
    let t = cov.transpose();
    cov += t;
    cov *= 0.5;
    (mean, cov)
}

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
pub fn sorted_eigen(sym: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let dim = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(dim, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

impl PrincipalSubspace {
    /// Fits the top-`d` principal directions of `fs`.
    pub fn fit(fs: &FeatureSet, d: usize) -> Result<Self> {
        Self::fit_matrix(fs.features(), d)
    }

    pub fn fit_matrix(x: &DMatrix<f64>, d: usize) -> Result<Self> {
        let (n, dim) = x.shape();
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "PCA needs at least two samples, got {n}"
            )));
        }
        if d == 0 || d > n.min(dim) {
            return Err(Error::InvalidParameter(format!(
                "subspace dimension {d} outside [1, {}]",
                n.min(dim)
            )));
        }
        let (mean, cov) = covariance(x);
        let total_variance = cov.trace();
        let degenerate = cov.iter().all(|&v| v == 0.0);
        let (values, vectors) = if degenerate {
            (DVector::zeros(dim), DMatrix::identity(dim, dim))
        } else {
            sorted_eigen(cov)
        };
        let mut basis = vectors.columns(0, d).into_owned();
        fix_signs(&mut basis);
        Ok(PrincipalSubspace {
            mean,
            basis,
            eigenvalues: values.rows(0, d).into_owned(),
            total_variance,
            center_at_projection: false,
            degenerate,
        })
    }

    /// Fits with every direction retained (`d = min(n, D)`).
    pub fn fit_full(fs: &FeatureSet) -> Result<Self> {
        Self::fit(fs, fs.len().min(fs.dim()))
    }

    pub fn centered(mut self, on: bool) -> Self {
        self.center_at_projection = on;
        self
    }

    /// Keeps only the leading `d` directions.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.rank() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate a {}-dimensional subspace to {d}",
                self.rank()
            )));
        }
        Ok(PrincipalSubspace {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, d).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, d).into_owned(),
            total_variance: self.total_variance,
            center_at_projection: self.center_at_projection,
            degenerate: self.degenerate,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn prepare(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.ambient_dim() {
            return Err(Error::Shape(format!(
                "subspace lives in R^{}, vector has {} entries",
                self.ambient_dim(),
                x.len()
            )));
        }
        Ok(if self.center_at_projection {
            x - &self.mean
        } else {
            x.clone()
        })
    }

    /// Coordinates `Pᵀx` in the subspace.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.prepare(x)?;
        Ok(self.basis.tr_mul(&x))
    }

    /// `‖Pᵀx‖`.
    pub fn project_norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.project(x)?.norm())
    }

    /// `‖x − P Pᵀ x‖`, the norm of the component outside the subspace.
    pub fn residual_norm(&self, x: &DVector<f64>) -> Result<f64> {
        let x = self.prepare(x)?;
        let coords = self.basis.tr_mul(&x);
        Ok((&x - &self.basis * coords).norm())
    }

    /// Fraction of the fit variance captured by the retained directions.
    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.eigenvalues.sum() / self.total_variance
    }
}

/// Smallest `d` whose leading eigenvalues explain at least `fraction` of the variance.
pub fn dimension_for_variance(full: &PrincipalSubspace, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "variance fraction {fraction} outside (0, 1]"
        )));
    }
    let total = full.total_variance;
    if total <= 0.0 {
        return Ok(1);
    }
    let mut cum = 0.0;
    for (k, &v) in full.eigenvalues.iter().enumerate() {
        cum += v.max(0.0);
        if cum / total >= fraction - 1e-12 {
            return Ok(k + 1);
        }
    }
    Err(Error::InvalidParameter(format!(
        "the fitted {} directions explain only {:.6} of the variance (< {fraction})",
        full.rank(),
        cum / total
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps_from(basis: DMatrix<f64>) -> PrincipalSubspace {
        let d = basis.ncols();
        PrincipalSubspace {
            mean: DVector::zeros(basis.nrows()),
            basis,
            eigenvalues: DVector::from_element(d, 1.0),
            total_variance: d as f64,
            center_at_projection: false,
            degenerate: false,
        }
    }

    fn with_eigenvalues(values: &[f64]) -> PrincipalSubspace {
        let k = values.len();
        PrincipalSubspace {
            mean: DVector::zeros(k),
            basis: DMatrix::identity(k, k),
            eigenvalues: DVector::from_row_slice(values),
            total_variance: values.iter().sum(),
            center_at_projection: false,
            degenerate: false,
        }
    }

    #[test]
    fn two_point_fit() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let ps = PrincipalSubspace::fit_matrix(&x, 1).unwrap();
        assert_eq!(ps.eigenvalues[0], 1.0);
        assert!((ps.basis.column(0) - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn rank_one_line_is_fully_explained() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i as f64 - 7.0) * if j == 0 { 1.0 } else { 2.0 });
        let ps = PrincipalSubspace::fit_matrix(&x, 2).unwrap();
        assert!(ps.eigenvalues[1].abs() < 1e-10);
        assert!((ps.truncated(1).unwrap().explained_fraction() - 1.0).abs() < 1e-12);
        assert_eq!(dimension_for_variance(&ps, 1.0).unwrap(), 1);
    }

    #[test]
    fn projection_norms() {
        let ps = ps_from(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(ps.project_norm(&DVector::from_vec(vec![3.0, 4.0, 0.0])).unwrap(), 5.0);
        assert_eq!(ps.project_norm(&DVector::from_vec(vec![0.0, 0.0, 7.0])).unwrap(), 0.0);
        let e1 = ps_from(DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]));
        assert_eq!(e1.project_norm(&DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(e1.residual_norm(&DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap(), 1.0);
        assert!(e1.project_norm(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn variance_rule() {
        assert_eq!(dimension_for_variance(&with_eigenvalues(&[9.0, 1.0]), 0.9).unwrap(), 1);
        assert_eq!(dimension_for_variance(&with_eigenvalues(&[9.0, 1.0]), 0.91).unwrap(), 2);
        assert_eq!(dimension_for_variance(&with_eigenvalues(&[5.0, 3.0, 2.0]), 0.8).unwrap(), 2);
        assert!(dimension_for_variance(&with_eigenvalues(&[1.0]), 0.0).is_err());
        assert!(dimension_for_variance(&with_eigenvalues(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn dimension_out_of_range() {
        let x = DMatrix::from_fn(5, 3, |i, j| (i * j) as f64);
        assert!(PrincipalSubspace::fit_matrix(&x, 0).is_err());
        assert!(PrincipalSubspace::fit_matrix(&x, 4).is_err());
        assert!(PrincipalSubspace::fit_matrix(&DMatrix::zeros(1, 3), 1).is_err());
    }

    #[test]
    fn identical_rows_are_flagged() {
        let x = DMatrix::from_element(4, 3, 2.5);
        let ps = PrincipalSubspace::fit_matrix(&x, 2).unwrap();
        assert!(ps.degenerate);
        assert_eq!(ps.eigenvalues, DVector::zeros(2));
        assert!((ps.basis.tr_mul(&ps.basis) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn sign_convention() {
        let mut b = DMatrix::from_row_slice(3, 2, &[0.1, 0.5, -0.9, -0.5, 0.2, 0.0]);
        fix_signs(&mut b);
        assert!(b[(1, 0)] > 0.0);
        // tie between rows 0 and 1 resolved by the lower index
        assert!(b[(0, 1)] > 0.0);
    }
}
