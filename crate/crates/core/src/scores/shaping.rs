//! Activation shaping before the head: ReAct clipping and the ASH family.
//!
//! ASH takes a pruning percentile `p`: each sample keeps its
//! `n − round(n·p/100)` largest activations (ties with the smallest kept value
//! survive too) and zeroes the rest.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::{ClassifierHead, FeatureSet};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shaping {
    /// `h ← min(h, threshold)`.
    React { threshold: f64 },
    /// Pruned entries zeroed.
    AshP { percentile: f64 },
    /// Kept entries replaced by `s_before / k`.
    AshB { percentile: f64 },
    /// Kept entries scaled by `exp(s_before / s_after)`.
    AshS { percentile: f64 },
}

/// Percentile with linear interpolation between order statistics (numpy's default).
pub fn percentile(data: &[f64], p: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside [0, 100]")));
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn react_clip(h: &[f64], threshold: f64) -> Vec<f64> {
    h.iter().map(|&v| v.min(threshold)).collect()
}

/// Number of activations ASH keeps out of `n` at pruning percentile `p`.
pub fn ash_keep_count(n: usize, p: f64) -> usize {
    let pruned = (n as f64 * p / 100.0).round() as usize;
    n.saturating_sub(pruned)
}

/// Mask of the entries surviving ASH pruning.
pub fn ash_prune(h: &[f64], p: f64) -> Result<Vec<bool>> {
    let k = ash_keep_count(h.len(), p);
    if k == 0 {
        return Err(Error::InvalidParameter(format!(
            "ASH percentile {p} prunes all {} activations",
            h.len()
        )));
    }
    let mut sorted = h.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let t = sorted[k - 1];
    Ok(h.iter().map(|&v| v >= t).collect())
}

impl Shaping {
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        let p = match *self {
            Shaping::React { threshold } => return Ok(react_clip(h, threshold)),
            Shaping::AshP { percentile } | Shaping::AshB { percentile } | Shaping::AshS { percentile } => {
                percentile
            }
        };
        let keep = ash_prune(h, p)?;
        let s_before: f64 = h.iter().sum();
        let out = match *self {
            Shaping::AshP { .. } => h.iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect(),
            Shaping::AshB { .. } => {
                let k = keep.iter().filter(|&&k| k).count();
                let fill = s_before / k as f64;
                keep.iter().map(|&k| if k { fill } else { 0.0 }).collect()
            }
            _ => {
                let s_after: f64 = h.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v).sum();
                if s_after == 0.0 {
                    return Err(Error::Degenerate("ASH-S: kept activations sum to zero".into()));
                }
                let factor = (s_before / s_after).exp();
                if !factor.is_finite() {
                    return Err(Error::NonFinite("ASH-S scaling factor".into()));
                }
                h.iter().zip(&keep).map(|(&v, &k)| if k { v * factor } else { 0.0 }).collect()
            }
        };
        Ok(out)
    }
}

/// Shapes every row of `fs` and recomputes logits through `head`.
pub fn feature_transform(shaping: Shaping, fs: &FeatureSet, head: &ClassifierHead) -> Result<FeatureSet> {
    head.check_dim(fs.dim())?;
    let x = fs.features();
    let rows: Vec<Vec<f64>> = par::map_indices(fs.len(), |i| {
        let h: Vec<f64> = x.row(i).iter().copied().collect();
        shaping.apply(&h)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let shaped = DMatrix::from_fn(fs.len(), fs.dim(), |i, j| rows[i][j]);
    let logits = head.logits(&shaped)?;
    FeatureSet::new(
        fs.name.clone(),
        shaped,
        Some(logits),
        fs.labels().map(|l| l.iter().map(|&v| v as i64).collect()),
        fs.num_classes(),
    )
}
