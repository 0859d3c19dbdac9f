//! NECO and NuSA: norm ratios of a feature against a subspace.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::subspace::PrincipalSubspace;

fn nonzero_norm(h: &DVector<f64>) -> Result<f64> {
    let n = h.norm();
    if n == 0.0 {
        Err(Error::ZeroNorm("feature vector".into()))
    } else {
        Ok(n)
    }
}

/// `‖Pᵀh‖ / ‖h‖`. With a centering subspace both norms use `h − mean`.
pub fn neco_raw(ps: &PrincipalSubspace, h: &DVector<f64>) -> Result<f64> {
    let denom = if ps.center_at_projection {
        nonzero_norm(&(h - &ps.mean))?
    } else {
        nonzero_norm(h)?
    };
    Ok(ps.project_norm(h)? / denom)
}

/// NECO score, multiplied by the maximum logit when one is given.
pub fn neco(ps: &PrincipalSubspace, h: &DVector<f64>, max_logit: Option<f64>) -> Result<f64> {
    let raw = neco_raw(ps, h)?;
    Ok(max_logit.map_or(raw, |m| raw * m))
}

/// Orthonormal basis (`D x r`) of the row space of `w`.
pub fn row_space_basis(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = crate::stats::svd(w)?;
    let smax = f.s.max();
    if smax == 0.0 {
        return Err(Error::ZeroNorm("classifier weight matrix".into()));
    }
    let rank = f.s.iter().filter(|&&s| s > 1e-12 * smax).count();
    Ok(f.v.columns(0, rank).into_owned())
}

/// `‖h^W‖ / ‖h‖`, the share of `h` inside the row space of `W`.
pub fn nusa(row_basis: &DMatrix<f64>, h: &DVector<f64>) -> Result<f64> {
    let n = nonzero_norm(h)?;
    Ok((row_basis.tr_mul(h).norm() / n).min(1.0))
}
