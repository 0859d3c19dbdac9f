//! Neural-collapse diagnostics.
//!
//! - NC1: `Tr[Σ_W Σ_B†] / C`
//! - NC2: equinormality (std/avg of centred mean norms) and equiangularity
//!   (mean of `|cos + 1/(C−1)|` over class pairs)
//! - NC3: self-duality `‖W̃ᵀ − M̃‖²_F` with column-normalised matrices
//! - NC4: disagreement between the classifier and the nearest class mean
//! - NC5: average `|cos(μ_c, μ_G^OOD)|` between ID class means and the OOD mean

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassifierHead, FeatureSet};
use crate::stats::{class_statistics, pseudo_inverse, ClassStatistics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    pub schema: u32,
    pub nc1: f64,
    pub nc2_equinorm: f64,
    pub nc2_equiangularity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nc3_self_duality: Option<f64>,
    pub nc4_ncc_mismatch: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nc5_orthodev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nc2_with_ood: Option<(f64, f64)>,
}

fn require_classes(cs: &ClassStatistics) -> Result<()> {
    if cs.num_classes() < 2 {
        Err(Error::InvalidParameter(format!(
            "neural-collapse metrics need at least two classes, got {}",
            cs.num_classes()
        )))
    } else {
        Ok(())
    }
}

pub fn nc1(cs: &ClassStatistics) -> Result<f64> {
    require_classes(cs)?;
    let pinv_b = pseudo_inverse(&cs.sigma_b)?;
    Ok((&cs.sigma_w * pinv_b).trace() / cs.num_classes() as f64)
}

/// std/avg of the column norms of `centered` (population std).
fn equinorm_of(centered: &DMatrix<f64>) -> Result<f64> {
    let norms: Vec<f64> = centered.column_iter().map(|c| c.norm()).collect();
    let k = norms.len() as f64;
    let avg = norms.iter().sum::<f64>() / k;
    if avg <= 0.0 {
        return Err(Error::ZeroNorm("all centred class means are zero".into()));
    }
    let var = norms.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / k;
    Ok(var.sqrt() / avg)
}

/// Mean over unordered pairs of `|cos + 1/(k−1)|` for the `k` columns of `centered`.
fn equiangularity_of(centered: &DMatrix<f64>) -> Result<f64> {
    let k = centered.ncols();
    let norms: Vec<f64> = centered.column_iter().map(|c| c.norm()).collect();
    if let Some(c) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNorm(format!("centred mean of class {c}")));
    }
    let shift = 1.0 / (k as f64 - 1.0);
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            let cos = centered.column(a).dot(&centered.column(b)) / (norms[a] * norms[b]);
            sum += (cos + shift).abs();
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

pub fn nc2_equinorm(cs: &ClassStatistics) -> Result<f64> {
    require_classes(cs)?;
    equinorm_of(&cs.centered_means())
}

pub fn nc2_equiangularity(cs: &ClassStatistics) -> Result<f64> {
    require_classes(cs)?;
    equiangularity_of(&cs.centered_means())
}

fn unit_columns(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("{what} column {j}")));
        }
        col /= n;
    }
    Ok(out)
}

/// `‖W̃ᵀ − M̃‖²_F` where both `Wᵀ` and the centred class-mean matrix have unit columns.
pub fn nc3_self_duality(head: &ClassifierHead, cs: &ClassStatistics) -> Result<f64> {
    head.check_dim(cs.dim())?;
    if head.num_classes() != cs.num_classes() {
        return Err(Error::Shape(format!(
            "head has {} classes, statistics have {}",
            head.num_classes(),
            cs.num_classes()
        )));
    }
    let w = unit_columns(&head.weights().transpose(), "classifier weight")?;
    let m = unit_columns(&cs.centered_means(), "centred class mean")?;
    Ok((w - m).norm_squared())
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, x) in v.enumerate() {
        if x > best_v {
            best_v = x;
            best = i;
        }
    }
    best
}

/// Index of the nearest class mean, ties broken by the lowest class index.
pub fn nearest_class_mean(cs: &ClassStatistics, h: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..cs.num_classes() {
        let d = (cs.class_means.row(c).transpose() - h).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Fraction of samples whose network prediction differs from the nearest class mean.
///
/// Predictions come from the feature set's logits when present, else from `head`.
pub fn nc4_ncc_mismatch(
    fs: &FeatureSet,
    cs: &ClassStatistics,
    head: Option<&ClassifierHead>,
) -> Result<f64> {
    if fs.dim() != cs.dim() {
        return Err(Error::Shape(format!(
            "features are {}-dimensional, statistics {}",
            fs.dim(),
            cs.dim()
        )));
    }
    let logits = match (fs.logits(), head) {
        (Some(l), _) => l.clone(),
        (None, Some(h)) => h.logits(fs.features())?,
        (None, None) => return Err(Error::MissingLogits),
    };
    if logits.ncols() != cs.num_classes() {
        return Err(Error::Shape(format!(
            "{} logit columns for {} classes",
            logits.ncols(),
            cs.num_classes()
        )));
    }
    let mismatched = (0..fs.len())
        .filter(|&i| argmax(logits.row(i).iter().copied()) != nearest_class_mean(cs, &fs.row(i)))
        .count();
    Ok(mismatched as f64 / fs.len() as f64)
}

/// Which class means NC5 compares against the OOD mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OrthoDevMeans {
    /// `μ_c` as written in the orthogonality metric.
    #[default]
    Raw,
    /// `μ_c − μ_G`, for comparison with the NC2 convention.
    Centered,
}

pub fn nc5_orthodev(cs_id: &ClassStatistics, ood: &FeatureSet) -> Result<f64> {
    nc5_orthodev_with(cs_id, ood, OrthoDevMeans::Raw)
}

pub fn nc5_orthodev_with(
    cs_id: &ClassStatistics,
    ood: &FeatureSet,
    means: OrthoDevMeans,
) -> Result<f64> {
    if ood.dim() != cs_id.dim() {
        return Err(Error::Shape(format!(
            "OOD features are {}-dimensional, ID statistics {}",
            ood.dim(),
            cs_id.dim()
        )));
    }
    let ood_mean = ood.mean();
    let ood_norm = ood_mean.norm();
    if ood_norm == 0.0 {
        return Err(Error::ZeroNorm("OOD global mean".into()));
    }
    let cols = match means {
        OrthoDevMeans::Raw => cs_id.class_means.transpose(),
        OrthoDevMeans::Centered => cs_id.centered_means(),
    };
    let mut sum = 0.0;
    for (c, mu) in cols.column_iter().enumerate() {
        let n = mu.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("mean of class {c}")));
        }
        sum += (mu.dot(&ood_mean) / (n * ood_norm)).abs();
    }
    Ok(sum / cols.ncols() as f64)
}

/// NC2 with the OOD global mean appended as one extra class.
///
/// The joint global mean is the count-weighted mean over ID and OOD samples.
pub fn nc2_with_ood(cs_id: &ClassStatistics, ood: &FeatureSet) -> Result<(f64, f64)> {
    require_classes(cs_id)?;
    if ood.dim() != cs_id.dim() {
        return Err(Error::Shape(format!(
            "OOD features are {}-dimensional, ID statistics {}",
            ood.dim(),
            cs_id.dim()
        )));
    }
    let c = cs_id.num_classes();
    let n_id = cs_id.num_samples() as f64;
    let n_ood = ood.len() as f64;
    let ood_mean = ood.mean();
    let joint = (&cs_id.global_mean * n_id + &ood_mean * n_ood) / (n_id + n_ood);
    let mut means = DMatrix::zeros(cs_id.dim(), c + 1);
    for k in 0..c {
        means.set_column(k, &(cs_id.class_mean(k) - &joint));
    }
    means.set_column(c, &(ood_mean - &joint));
    Ok((equinorm_of(&means)?, equiangularity_of(&means)?))
}

/// Every metric the inputs allow. NC3 needs a head, NC5 and the OOD-augmented NC2 an OOD set.
pub fn nc_report(
    fs: &FeatureSet,
    head: Option<&ClassifierHead>,
    ood: Option<&FeatureSet>,
) -> Result<NcReport> {
    let cs = class_statistics(fs)?;
    Ok(NcReport {
        schema: crate::SCHEMA_VERSION,
        nc1: nc1(&cs)?,
        nc2_equinorm: nc2_equinorm(&cs)?,
        nc2_equiangularity: nc2_equiangularity(&cs)?,
        nc3_self_duality: head.map(|h| nc3_self_duality(h, &cs)).transpose()?,
        nc4_ncc_mismatch: nc4_ncc_mismatch(fs, &cs, head)?,
        nc5_orthodev: ood.map(|o| nc5_orthodev(&cs, o)).transpose()?,
        nc2_with_ood: ood.map(|o| nc2_with_ood(&cs, o)).transpose()?,
    })
}
