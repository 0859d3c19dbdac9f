//! Browser playground on synthetic Simplex-ETF data.
//!
//! Every export regenerates a small seeded benchmark from `(seed, theta, sigma_w)`
//! and returns flat `f64` arrays the page draws on canvases.

use neco_core::eval::{auroc, fpr_at_tpr, histogram, sweep_dimension, DEFAULT_TPR};
use neco_core::synthetic::{generate_benchmark, Benchmark, EtfConfig};
use neco_core::{FittedScorer, Method, PrincipalSubspace, ScorerParams};
use wasm_bindgen::prelude::*;

const CLASSES: usize = 10;
const DIM: usize = 32;

fn benchmark(seed: u32, theta: f64, sigma_w: f64) -> Result<Benchmark, String> {
    generate_benchmark(&EtfConfig {
        classes: CLASSES,
        dim: DIM,
        mean_norm: 5.0,
        sigma_w,
        n_per_class: 40,
        ood_n: 300,
        ood_ortho_dev: theta,
        ood_sigma: None,
        seed: u64::from(seed),
    })
    .map_err(|e| e.to_string())
}

/// Catalog names accepted by [`score_histogram`], comma-separated.
#[wasm_bindgen]
pub fn method_names() -> String {
    Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
}

/// ID test and OOD samples projected on the top two principal axes of the ID train set.
///
/// Returns `[x, y, label, ...]` with `label` the class index, or `-1` for OOD.
#[wasm_bindgen]
pub fn pca_scatter(seed: u32, theta: f64, sigma_w: f64) -> Result<Vec<f64>, String> {
    let b = benchmark(seed, theta, sigma_w)?;
    let ps = PrincipalSubspace::fit(&b.train, 2)
        .map_err(|e| e.to_string())?
        .centered(true);
    let mut out = Vec::with_capacity(3 * (b.test.len() + b.ood.len()));
    let labels: Vec<f64> = match b.test.labels() {
        Some(l) => l.iter().map(|&c| c as f64).collect(),
        None => vec![0.0; b.test.len()],
    };
    let ood_labels = vec![-1.0; b.ood.len()];
    for (fs, tags) in [(&b.test, &labels), (&b.ood, &ood_labels)] {
        for (i, &tag) in tags.iter().enumerate() {
            let p = ps.project(&fs.row(i)).map_err(|e| e.to_string())?;
            out.extend([p[0], p[1], tag]);
        }
    }
    Ok(out)
}

/// NECO AUROC and FPR95 for every principal dimension `1..=max_d`.
///
/// Returns `[d, auroc, fpr95, ...]`.
#[wasm_bindgen]
pub fn neco_sweep(seed: u32, theta: f64, sigma_w: f64, max_d: u32, use_maxlogit: bool) -> Result<Vec<f64>, String> {
    let b = benchmark(seed, theta, sigma_w)?;
    let max_d = (max_d as usize).clamp(1, DIM);
    let grid: Vec<usize> = (1..=max_d).collect();
    let params = ScorerParams {
        use_maxlogit,
        ..ScorerParams::default()
    };
    let s = sweep_dimension(&b.train, &b.test, &b.ood, Some(&b.head), &grid, &params)
        .map_err(|e| e.to_string())?;
    Ok(s.rows.iter().flat_map(|r| [r.d as f64, r.auroc, r.fpr95]).collect())
}

/// Scores ID test and OOD with one catalog method.
///
/// Returns `[auroc, fpr95, bin_lo, bin_hi, count_id, count_ood, ...]`.
#[wasm_bindgen]
pub fn score_histogram(method: &str, seed: u32, theta: f64, sigma_w: f64, bins: u32) -> Result<Vec<f64>, String> {
    let method: Method = method.parse().map_err(|e: neco_core::Error| e.to_string())?;
    let b = benchmark(seed, theta, sigma_w)?;
    let run = || -> neco_core::Result<Vec<f64>> {
        let s = FittedScorer::fit(method, &b.train, Some(&b.head), &ScorerParams::default())?;
        let id = s.score(&b.test)?.scores;
        let ood = s.score(&b.ood)?.scores;
        let mut out = vec![auroc(&id, &ood)?, fpr_at_tpr(&id, &ood, DEFAULT_TPR)?];
        for h in histogram(&id, &ood, bins.max(1) as usize)? {
            out.extend([h.bin_lo, h.bin_hi, h.count_id as f64, h.count_ood as f64]);
        }
        Ok(out)
    };
    run().map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_layout() {
        let v = pca_scatter(1, 0.0, 0.05).unwrap();
        assert_eq!(v.len(), 3 * (CLASSES * 40 + 300));
        assert_eq!(v.iter().skip(2).step_by(3).filter(|&&l| l < 0.0).count(), 300);
    }

    #[test]
    fn sweep_rows() {
        let v = neco_sweep(1, 0.0, 0.05, 12, true).unwrap();
        assert_eq!(v.len(), 36);
        assert_eq!(v[0], 1.0);
        // d = C
        assert!(v[3 * 9 + 1] >= 0.999);
    }

    #[test]
    fn histogram_for_every_method() {
        for m in method_names().split(',') {
            let v = score_histogram(m, 2, 0.0, 0.05, 10).unwrap();
            assert_eq!(v.len(), 2 + 40, "{m}");
            let total: f64 = v[2..].chunks(4).map(|c| c[2] + c[3]).sum();
            assert_eq!(total, (CLASSES * 40 + 300) as f64);
        }
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(score_histogram("odin", 0, 0.0, 0.05, 10).is_err());
        assert!(pca_scatter(0, 2.0, 0.05).is_err());
    }
}
