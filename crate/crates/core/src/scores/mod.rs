//! The scoring catalog: NECO and the post-hoc baselines.
//!
//! Every method is oriented so that a higher score means "more in-distribution".
//! Methods whose natural statistic grows for OOD inputs (ViM, Residual,
//! Mahalanobis, KL-Matching) are negated internally.

mod distance;
mod logit;
mod neco;
mod shaping;
mod vim;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassifierHead, FeatureSet};
use crate::par;
use crate::subspace::{dimension_for_variance, PrincipalSubspace};

pub use distance::{
    fit_class_probabilities, kl_divergence, kl_matching, mahalanobis, KL_FLOOR,
};
pub use logit::{energy, gradnorm, max_logit, msp, softmax};
pub use neco::{neco, neco_raw, nusa, row_space_basis};
pub use shaping::{ash_keep_count, ash_prune, feature_transform, percentile, react_clip, Shaping};
pub use vim::{vim_alpha, vim_dimension, vim_score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "neco")]
    Neco,
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "maxlogit")]
    MaxLogit,
    #[serde(rename = "energy")]
    Energy,
    #[serde(rename = "vim")]
    Vim,
    #[serde(rename = "residual")]
    Residual,
    #[serde(rename = "nusa")]
    Nusa,
    #[serde(rename = "mahalanobis")]
    Mahalanobis,
    #[serde(rename = "kl-matching")]
    KlMatching,
    #[serde(rename = "gradnorm")]
    GradNorm,
    #[serde(rename = "react")]
    React,
    #[serde(rename = "ash-p")]
    AshP,
    #[serde(rename = "ash-b")]
    AshB,
    #[serde(rename = "ash-s")]
    AshS,
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Neco,
        Method::Msp,
        Method::MaxLogit,
        Method::Energy,
        Method::Vim,
        Method::Residual,
        Method::Nusa,
        Method::Mahalanobis,
        Method::KlMatching,
        Method::GradNorm,
        Method::React,
        Method::AshP,
        Method::AshB,
        Method::AshS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Neco => "neco",
            Method::Msp => "msp",
            Method::MaxLogit => "maxlogit",
            Method::Energy => "energy",
            Method::Vim => "vim",
            Method::Residual => "residual",
            Method::Nusa => "nusa",
            Method::Mahalanobis => "mahalanobis",
            Method::KlMatching => "kl-matching",
            Method::GradNorm => "gradnorm",
            Method::React => "react",
            Method::AshP => "ash-p",
            Method::AshB => "ash-b",
            Method::AshS => "ash-s",
        }
    }

    /// Methods that cannot run without the classifier weights.
    pub fn needs_head(self) -> bool {
        matches!(
            self,
            Method::Nusa
                | Method::GradNorm
                | Method::React
                | Method::AshP
                | Method::AshB
                | Method::AshS
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidParameter(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Hyperparameters for fitting. Unset values fall back to the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerParams {
    /// NECO principal dimension; `None` picks the smallest `d` explaining 90% of the ID variance.
    pub neco_dim: Option<usize>,
    pub use_maxlogit: bool,
    pub neco_centered: bool,
    /// ViM/Residual principal dimension; `None` uses [`vim_dimension`].
    pub vim_dim: Option<usize>,
    pub react_percentile: f64,
    /// ASH pruning percentile; `None` uses the per-variant default.
    pub ash_percentile: Option<f64>,
}

impl Default for ScorerParams {
    fn default() -> Self {
        ScorerParams {
            neco_dim: None,
            use_maxlogit: true,
            neco_centered: false,
            vim_dim: None,
            react_percentile: DEFAULT_REACT_PERCENTILE,
            ash_percentile: None,
        }
    }
}

pub const DEFAULT_REACT_PERCENTILE: f64 = 99.0;
pub const NECO_DEFAULT_VARIANCE: f64 = 0.9;
/// Tuning grid for the ASH pruning percentile.
pub const ASH_GRID: [f64; 8] = [65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 99.0];

/// Default ASH percentile per variant (ViT on ImageNet).
pub fn default_ash_percentile(method: Method) -> Option<f64> {
    match method {
        Method::AshP => Some(60.0),
        Method::AshB => Some(70.0),
        Method::AshS => Some(60.0),
        _ => None,
    }
}

/// Method-specific state produced by fitting on ID training data.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifacts {
    None,
    Neco {
        subspace: PrincipalSubspace,
        use_maxlogit: bool,
    },
    Vim {
        subspace: PrincipalSubspace,
        alpha: f64,
    },
    Residual {
        subspace: PrincipalSubspace,
    },
    Nusa {
        row_basis: DMatrix<f64>,
    },
    Mahalanobis {
        class_means: DMatrix<f64>,
        precision: DMatrix<f64>,
    },
    KlMatching {
        class_probs: DMatrix<f64>,
    },
    React {
        threshold: f64,
    },
    Ash {
        percentile: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedScorer {
    pub method: Method,
    pub head: Option<ClassifierHead>,
    pub artifacts: Artifacts,
}

/// Per-sample scores, higher = more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub method: Method,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(method: Method, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{method} score of sample {i}")));
        }
        Ok(ScoreVector { method, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Thresholding as in deployment: a sample is flagged OOD unless its score exceeds `threshold`.
    pub fn is_ood(&self, threshold: f64) -> Vec<bool> {
        self.scores.iter().map(|&s| s <= threshold).collect()
    }
}

/// Logits from the feature set itself, or recomputed through the head.
fn resolve_logits<'a>(fs: &'a FeatureSet, head: Option<&ClassifierHead>) -> Result<Cow<'a, DMatrix<f64>>> {
    match (fs.logits(), head) {
        (Some(l), _) => Ok(Cow::Borrowed(l)),
        (None, Some(h)) => Ok(Cow::Owned(h.logits(fs.features())?)),
        (None, None) => Err(Error::MissingLogits),
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

fn per_row<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    par::map_indices(n, f).into_iter().collect()
}

/// Scores of a logit-only method.
pub fn logit_scores(method: Method, logits: &DMatrix<f64>) -> Result<ScoreVector> {
    let f: fn(&[f64]) -> f64 = match method {
        Method::Msp => msp,
        Method::MaxLogit => max_logit,
        Method::Energy => energy,
        other => {
            return Err(Error::InvalidParameter(format!(
                "{other} is not a logit-only method"
            )))
        }
    };
    if method == Method::Msp && logits.ncols() < 2 {
        return Err(Error::InvalidParameter(
            "MSP needs at least two classes".into(),
        ));
    }
    let scores = per_row(logits.nrows(), |i| {
        let r: Vec<f64> = logits.row(i).iter().copied().collect();
        Ok(f(&r))
    })?;
    ScoreVector::new(method, scores)
}

fn require_head(method: Method, head: Option<&ClassifierHead>) -> Result<&ClassifierHead> {
    head.ok_or_else(|| {
        Error::InvalidParameter(format!("{method} needs the classifier head"))
    })
}

impl FittedScorer {
    /// Fits `method` on ID training data.
    pub fn fit(
        method: Method,
        train: &FeatureSet,
        head: Option<&ClassifierHead>,
        params: &ScorerParams,
    ) -> Result<Self> {
        if let Some(h) = head {
            h.check_dim(train.dim())?;
        }
        if method.needs_head() {
            require_head(method, head)?;
        }
        let artifacts = match method {
            Method::Msp | Method::MaxLogit | Method::Energy | Method::GradNorm => Artifacts::None,
            Method::Neco => {
                let d = match params.neco_dim {
                    Some(d) => d,
                    None => dimension_for_variance(
                        &PrincipalSubspace::fit_full(train)?,
                        NECO_DEFAULT_VARIANCE,
                    )?,
                };
                Artifacts::Neco {
                    subspace: PrincipalSubspace::fit(train, d)?.centered(params.neco_centered),
                    use_maxlogit: params.use_maxlogit,
                }
            }
            Method::Vim | Method::Residual => {
                let d = params.vim_dim.unwrap_or_else(|| vim_dimension(train.dim()));
                if d >= train.dim() {
                    return Err(Error::InvalidParameter(format!(
                        "ViM principal dimension {d} leaves no null space in R^{}",
                        train.dim()
                    )));
                }
                let subspace = PrincipalSubspace::fit(train, d)?.centered(true);
                if method == Method::Residual {
                    Artifacts::Residual { subspace }
                } else {
                    let logits = resolve_logits(train, head)?;
                    let maxlogits: Vec<f64> = (0..train.len())
                        .map(|i| max_logit(row(&logits, i).as_slice()))
                        .collect();
                    let residuals = per_row(train.len(), |i| subspace.residual_norm(&train.row(i)))?;
                    let alpha = vim_alpha(&maxlogits, &residuals)?;
                    Artifacts::Vim { subspace, alpha }
                }
            }
            Method::Nusa => Artifacts::Nusa {
                row_basis: row_space_basis(require_head(method, head)?.weights())?,
            },
            Method::Mahalanobis => {
                let cs = crate::stats::class_statistics(train)?;
                Artifacts::Mahalanobis {
                    precision: crate::stats::pseudo_inverse(&cs.sigma_w)?,
                    class_means: cs.class_means,
                }
            }
            Method::KlMatching => {
                let logits = resolve_logits(train, head)?;
                Artifacts::KlMatching {
                    class_probs: fit_class_probabilities(&logits)?,
                }
            }
            Method::React => Artifacts::React {
                threshold: percentile(train.features().as_slice(), params.react_percentile)?,
            },
            Method::AshP | Method::AshB | Method::AshS => {
                let p = params
                    .ash_percentile
                    .or_else(|| default_ash_percentile(method))
                    .unwrap();
                if !(0.0..100.0).contains(&p) {
                    return Err(Error::InvalidParameter(format!(
                        "ASH percentile {p} outside [0, 100)"
                    )));
                }
                Artifacts::Ash { percentile: p }
            }
        };
        Ok(FittedScorer {
            method,
            head: head.cloned(),
            artifacts,
        })
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.artifacts {
            Artifacts::Neco { subspace, .. }
            | Artifacts::Vim { subspace, .. }
            | Artifacts::Residual { subspace } => Some(subspace.ambient_dim()),
            Artifacts::Nusa { row_basis } => Some(row_basis.nrows()),
            Artifacts::Mahalanobis { class_means, .. } => Some(class_means.ncols()),
            _ => self.head.as_ref().map(|h| h.dim()),
        }
    }

    /// Scores every sample of `fs`.
    pub fn score(&self, fs: &FeatureSet) -> Result<ScoreVector> {
        if let Some(d) = self.dim() {
            if d != fs.dim() {
                return Err(Error::Shape(format!(
                    "{} was fitted on {d}-dimensional features, got {}",
                    self.method,
                    fs.dim()
                )));
            }
        }
        let head = self.head.as_ref();
        let n = fs.len();
        let scores = match &self.artifacts {
            Artifacts::None => match self.method {
                Method::GradNorm => {
                    let head = require_head(self.method, head)?;
                    per_row(n, |i| {
                        let h = fs.row(i);
                        Ok(gradnorm(head.logits_for(&h).as_slice(), h.as_slice()))
                    })?
                }
                m => return logit_scores(m, resolve_logits(fs, head)?.as_ref()),
            },
            Artifacts::Neco {
                subspace,
                use_maxlogit,
            } => {
                let logits = if *use_maxlogit {
                    Some(resolve_logits(fs, head)?)
                } else {
                    None
                };
                per_row(n, |i| {
                    let ml = logits.as_ref().map(|l| max_logit(row(l, i).as_slice()));
                    neco(subspace, &fs.row(i), ml)
                })?
            }
            Artifacts::Vim { subspace, alpha } => {
                let logits = resolve_logits(fs, head)?;
                per_row(n, |i| {
                    let r = subspace.residual_norm(&fs.row(i))?;
                    Ok(vim_score(row(&logits, i).as_slice(), r, *alpha))
                })?
            }
            Artifacts::Residual { subspace } => {
                per_row(n, |i| Ok(-subspace.residual_norm(&fs.row(i))?))?
            }
            Artifacts::Nusa { row_basis } => per_row(n, |i| nusa(row_basis, &fs.row(i)))?,
            Artifacts::Mahalanobis {
                class_means,
                precision,
            } => per_row(n, |i| Ok(mahalanobis(class_means, precision, &fs.row(i))))?,
            Artifacts::KlMatching { class_probs } => {
                let logits = resolve_logits(fs, head)?;
                if logits.ncols() != class_probs.ncols() {
                    return Err(Error::Shape(format!(
                        "{} logit columns, fitted on {}",
                        logits.ncols(),
                        class_probs.ncols()
                    )));
                }
                per_row(n, |i| kl_matching(class_probs, row(&logits, i).as_slice()))?
            }
            Artifacts::React { threshold } => {
                return self.shaped_energy(fs, Shaping::React { threshold: *threshold })
            }
            Artifacts::Ash { percentile } => {
                let shaping = match self.method {
                    Method::AshP => Shaping::AshP { percentile: *percentile },
                    Method::AshB => Shaping::AshB { percentile: *percentile },
                    _ => Shaping::AshS { percentile: *percentile },
                };
                return self.shaped_energy(fs, shaping);
            }
        };
        ScoreVector::new(self.method, scores)
    }

    fn shaped_energy(&self, fs: &FeatureSet, shaping: Shaping) -> Result<ScoreVector> {
        let head = require_head(self.method, self.head.as_ref())?;
        let shaped = feature_transform(shaping, fs, head)?;
        let mut sv = logit_scores(Method::Energy, shaped.logits().expect("logits recomputed"))?;
        sv.method = self.method;
        Ok(sv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("odin".parse::<Method>().is_err());
    }

    #[test]
    fn threshold_convention() {
        let sv = ScoreVector::new(Method::Neco, vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(sv.is_ood(0.5), vec![true, true, false]);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(ScoreVector::new(Method::Msp, vec![f64::NAN]).is_err());
    }

    #[test]
    fn head_methods_need_a_head() {
        let fs = FeatureSet::from_features("t", DMatrix::from_element(3, 2, 1.0)).unwrap();
        for m in [Method::Nusa, Method::GradNorm, Method::React, Method::AshB] {
            assert!(FittedScorer::fit(m, &fs, None, &ScorerParams::default()).is_err());
        }
    }

    #[test]
    fn logit_methods_need_logits() {
        let fs = FeatureSet::from_features("t", DMatrix::from_element(3, 2, 1.0)).unwrap();
        let s = FittedScorer::fit(Method::Energy, &fs, None, &ScorerParams::default()).unwrap();
        assert!(matches!(s.score(&fs), Err(Error::MissingLogits)));
    }
}
