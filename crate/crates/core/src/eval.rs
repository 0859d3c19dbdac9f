//! Detector evaluation: AUROC, FPR at a fixed TPR, dimension sweeps, histograms.
//!
//! ID is the positive class and scores are oriented "higher = ID". The ROC is
//! the empirical step function; thresholds sit on observed scores only.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassifierHead, FeatureSet};
use crate::par;
use crate::scores::{max_logit, neco, Method, ScoreVector, ScorerParams};
use crate::subspace::PrincipalSubspace;
use crate::SCHEMA_VERSION;

pub const DEFAULT_TPR: f64 = 0.95;

fn check_population(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} population is empty")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} scores")));
    }
    Ok(())
}

/// Mann–Whitney AUROC with half credit for ties, by sort-and-rank.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_population(id, "ID")?;
    check_population(ood, "OOD")?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of (1-based, tie-averaged) ranks of the ID scores, kept doubled to stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        let n_id_here = all[i..=j].iter().filter(|e| e.1).count() as u128;
        rank_sum2 += avg2 * n_id_here;
        i = j + 1;
    }
    let n_id = id.len() as u128;
    let u2 = rank_sum2 - n_id * (n_id + 1);
    Ok(u2 as f64 / 2.0 / (id.len() as f64 * ood.len() as f64))
}

/// Fraction of OOD scores at or above the threshold that keeps at least `tpr` of the ID scores.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr: f64) -> Result<f64> {
    check_population(id, "ID")?;
    check_population(ood, "OOD")?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::InvalidParameter(format!("TPR level {tpr} outside (0, 1]")));
    }
    let t = tpr_threshold(id, tpr);
    let hits = ood.iter().filter(|&&s| s >= t).count();
    Ok(hits as f64 / ood.len() as f64)
}

/// The `⌈n·tpr⌉`-th largest ID score.
pub fn tpr_threshold(id: &[f64], tpr: f64) -> f64 {
    let n = id.len();
    let k = ((n as f64 * tpr - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = id.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[k - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: Method,
    pub auroc: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

pub fn evaluate(id: &ScoreVector, ood: &ScoreVector) -> Result<MethodEval> {
    if id.method != ood.method {
        return Err(Error::InvalidParameter(format!(
            "comparing {} scores with {} scores",
            id.method, ood.method
        )));
    }
    Ok(MethodEval {
        method: id.method,
        auroc: auroc(&id.scores, &ood.scores)?,
        fpr95: fpr_at_tpr(&id.scores, &ood.scores, DEFAULT_TPR)?,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub auroc: f64,
    pub fpr95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Lowest FPR95, ties broken by the highest AUROC, then the smallest `d`.
    pub best_d: usize,
}

fn max_logits(fs: &FeatureSet, head: Option<&ClassifierHead>) -> Result<Vec<f64>> {
    let logits = match (fs.logits(), head) {
        (Some(l), _) => l.clone(),
        (None, Some(h)) => h.logits(fs.features())?,
        (None, None) => return Err(Error::MissingLogits),
    };
    Ok(logits
        .row_iter()
        .map(|r| max_logit(&r.iter().copied().collect::<Vec<_>>()))
        .collect())
}

/// NECO evaluated at every `d` of `grid`, refitting the principal subspace each time.
pub fn sweep_dimension(
    train: &FeatureSet,
    id_test: &FeatureSet,
    ood: &FeatureSet,
    head: Option<&ClassifierHead>,
    grid: &[usize],
    params: &ScorerParams,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty dimension grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("dimension grid must be strictly increasing".into()));
    }
    let max_d = train.len().min(train.dim());
    if let Some(&bad) = grid.iter().find(|&&d| d == 0 || d > max_d) {
        return Err(Error::InvalidParameter(format!("dimension {bad} outside [1, {max_d}]")));
    }
    for fs in [id_test, ood] {
        if fs.dim() != train.dim() {
            return Err(Error::Shape(format!(
                "{} has {} features, train has {}",
                fs.name,
                fs.dim(),
                train.dim()
            )));
        }
    }
    let full = PrincipalSubspace::fit(train, *grid.last().unwrap())?.centered(params.neco_centered);
    let (ml_id, ml_ood) = if params.use_maxlogit {
        (Some(max_logits(id_test, head)?), Some(max_logits(ood, head)?))
    } else {
        (None, None)
    };
    let score_all = |ps: &PrincipalSubspace, fs: &FeatureSet, ml: &Option<Vec<f64>>| -> Result<Vec<f64>> {
        (0..fs.len())
            .map(|i| neco(ps, &fs.row(i), ml.as_ref().map(|m| m[i])))
            .collect()
    };
    let rows: Vec<SweepRow> = par::map_indices(grid.len(), |k| {
        let d = grid[k];
        let ps = full.truncated(d)?;
        let s_id = score_all(&ps, id_test, &ml_id)?;
        let s_ood = score_all(&ps, ood, &ml_ood)?;
        Ok(SweepRow {
            d,
            auroc: auroc(&s_id, &s_ood)?,
            fpr95: fpr_at_tpr(&s_id, &s_ood, DEFAULT_TPR)?,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let best = rows
        .iter()
        .min_by(|a, b| {
            a.fpr95
                .total_cmp(&b.fpr95)
                .then(b.auroc.total_cmp(&a.auroc))
                .then(a.d.cmp(&b.d))
        })
        .unwrap();
    Ok(Sweep {
        best_d: best.d,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count_id: usize,
    pub count_ood: usize,
}

/// Shared-edge histogram of both populations over their joint range.
/// Bins are half-open except the last, which includes the maximum.
pub fn histogram(id: &[f64], ood: &[f64], bins: usize) -> Result<Vec<HistBin>> {
    check_population(id, "ID")?;
    check_population(ood, "OOD")?;
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    let lo = id.iter().chain(ood).copied().fold(f64::INFINITY, f64::min);
    let mut hi = id.iter().chain(ood).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let index = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut out: Vec<HistBin> = (0..bins)
        .map(|b| HistBin {
            bin_lo: lo + b as f64 * width,
            bin_hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count_id: 0,
            count_ood: 0,
        })
        .collect();
    for &v in id {
        out[index(v)].count_id += 1;
    }
    for &v in ood {
        out[index(v)].count_ood += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub methods: Vec<MethodEval>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<Sweep>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub histogram: Option<Vec<HistBin>>,
}

impl EvalReport {
    pub fn new(methods: Vec<MethodEval>) -> Self {
        EvalReport {
            schema: SCHEMA_VERSION,
            methods,
            sweep: None,
            histogram: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("d,auroc,fpr95\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.d, r.auroc, r.fpr95).unwrap();
    }
    s
}

pub fn histogram_csv(bins: &[HistBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count_id,count_ood\n");
    for b in bins {
        writeln!(s, "{},{},{},{}", b.bin_lo, b.bin_hi, b.count_id, b.count_ood).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_by_hand() {
        assert_eq!(auroc(&[1.0, 2.0, 3.0], &[0.0, -1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[2.0, 2.0], &[2.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[3.0, 1.0], &[2.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn fpr_by_hand() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(tpr_threshold(&id, 0.95), 6.0);
        assert_eq!(fpr_at_tpr(&id, &[5.0, 6.0, 7.0], 0.95).unwrap(), 2.0 / 3.0);
        assert_eq!(fpr_at_tpr(&id, &[0.0, -3.0], 0.95).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&id, &[101.0], 0.95).unwrap(), 1.0);
        assert!(fpr_at_tpr(&id, &[1.0], 0.0).is_err());
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.0, 0.5, 1.0], &[0.25], 2).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!((h[0].count_id, h[0].count_ood), (1, 1));
        assert_eq!((h[1].count_id, h[1].count_ood), (2, 0));
        assert_eq!(h[1].bin_hi, 1.0);
        let flat = histogram(&[2.0], &[2.0], 3).unwrap();
        assert_eq!(flat.iter().map(|b| b.count_id + b.count_ood).sum::<usize>(), 2);
    }

    #[test]
    fn csv_headers() {
        assert!(sweep_csv(&[SweepRow { d: 3, auroc: 1.0, fpr95: 0.0 }]).starts_with("d,auroc,fpr95\n3,1,0"));
        assert!(histogram_csv(&[]).starts_with("bin_lo,bin_hi,count_id,count_ood"));
    }
}
