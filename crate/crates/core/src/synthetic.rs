//! Seeded Simplex-ETF datasets with a controllable OOD cluster.
//!
//! Class means form an exact simplex equiangular tight frame. The last one or
//! two coordinates are reserved: class means and ID noise are exactly zero
//! there, and the orthogonal OOD direction lives there. This keeps the ID
//! covariance rows on those coordinates exactly zero, so projections of the
//! OOD mean onto the fitted principal subspace vanish up to rounding.
//!
//! Inside the ETF span the frame is rotated so that every class mean has a
//! nonzero activation sum of equal magnitude. Activation-shaping baselines
//! (ASH-B in particular) rely on that sum.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassifierHead, FeatureSet};
use crate::subspace::PrincipalSubspace;

/// Share of the first ETF direction tilted towards the all-ones vector.
const MASS_TILT: f64 = 0.5;
const FIXED_FRAME_SEED: u64 = 0x5eed_e7f0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtfConfig {
    #[serde(alias = "C")]
    pub classes: usize,
    #[serde(alias = "D")]
    pub dim: usize,
    pub mean_norm: f64,
    pub sigma_w: f64,
    pub n_per_class: usize,
    pub ood_n: usize,
    /// 0 puts the OOD mean exactly orthogonal to the ID span, 1 puts it inside.
    pub ood_ortho_dev: f64,
    /// Defaults to `sigma_w`.
    pub ood_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for EtfConfig {
    fn default() -> Self {
        EtfConfig {
            classes: 10,
            dim: 64,
            mean_norm: 5.0,
            sigma_w: 0.05,
            n_per_class: 100,
            ood_n: 1000,
            ood_ortho_dev: 0.0,
            ood_sigma: None,
            seed: 0,
        }
    }
}

impl EtfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim < self.classes {
            return bad(format!("dimension {} below class count {}", self.dim, self.classes));
        }
        if !(self.mean_norm.is_finite() && self.mean_norm > 0.0) {
            return bad(format!("mean_norm must be positive, got {}", self.mean_norm));
        }
        if !(self.sigma_w.is_finite() && self.sigma_w >= 0.0) {
            return bad(format!("sigma_w must be non-negative, got {}", self.sigma_w));
        }
        if let Some(s) = self.ood_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("ood_sigma must be non-negative, got {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.ood_ortho_dev) {
            return bad(format!("ood_ortho_dev {} outside [0, 1]", self.ood_ortho_dev));
        }
        if self.n_per_class == 0 || self.ood_n == 0 {
            return bad("sample counts must be positive".into());
        }
        Ok(())
    }

    pub fn ood_sigma(&self) -> f64 {
        self.ood_sigma.unwrap_or(self.sigma_w)
    }
}

/// Coordinates available to the class means, and the unit OOD direction on the rest.
fn layout(c: usize, d: usize) -> (usize, DVector<f64>) {
    let mut v = DVector::zeros(d);
    if d >= c + 2 {
        v[d - 2] = 0.5f64.sqrt();
        v[d - 1] = -(0.5f64.sqrt());
        (d - 2, v)
    } else {
        v[d - 1] = 1.0;
        (d - 1, v)
    }
}

/// Orthonormal basis of the sum-zero subspace of `R^c` (Helmert columns), `c x (c−1)`.
fn helmert(c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c, c - 1, |i, k| {
        let k1 = (k + 1) as f64;
        let norm = (k1 * (k1 + 1.0)).sqrt();
        if i <= k {
            1.0 / norm
        } else if i == k + 1 {
            -k1 / norm
        } else {
            0.0
        }
    })
}

fn gaussian(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Orthonormal columns spanning the columns of `m` (Gram–Schmidt, applied twice).
fn orthonormalize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let proj = m.column(k).dot(&m.column(j));
                let qk = m.column(k).into_owned();
                m.column_mut(j).axpy(-proj, &qk, 1.0);
            }
        }
        let n = m.column(j).norm();
        m.column_mut(j).unscale_mut(n);
    }
    m
}

/// ETF class means (`C x D`) and the unit OOD direction.
fn etf_frame(c: usize, d: usize, mean_norm: f64, rng: &mut ChaCha20Rng) -> (DMatrix<f64>, DVector<f64>) {
    let (m, v_perp) = layout(c, d);
    let a = helmert(c);

    // rotate the simplex so its first axis follows the alternating sign pattern g
    let g = DVector::from_fn(c, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let g = g.add_scalar(-g.mean());
    let u = a.tr_mul(&g).normalize();
    let mut seed_cols = gaussian(rng, c - 1, c - 1);
    seed_cols.set_column(0, &u);
    let f = orthonormalize(seed_cols);

    let tilt = m >= c;
    let ones = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut q = gaussian(rng, m, c - 1);
    if tilt {
        for mut col in q.column_iter_mut() {
            let p = ones.dot(&col);
            col.axpy(-p, &ones, 1.0);
        }
    }
    let mut q = orthonormalize(q);
    if tilt {
        let first = q.column(0) * (1.0 - MASS_TILT * MASS_TILT).sqrt() + &ones * MASS_TILT;
        q.set_column(0, &first);
    }

    let inner = (a * f) * q.transpose();
    let mut means = DMatrix::zeros(c, d);
    for i in 0..c {
        let row = inner.row(i);
        let scale = mean_norm / row.norm();
        for j in 0..m {
            means[(i, j)] = row[j] * scale;
        }
    }
    (means, v_perp)
}

/// `C x D` simplex ETF means of norm `mean_norm` on a fixed frame.
pub fn simplex_etf_means(classes: usize, dim: usize, mean_norm: f64) -> Result<DMatrix<f64>> {
    EtfConfig {
        classes,
        dim,
        mean_norm,
        ..EtfConfig::default()
    }
    .validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(FIXED_FRAME_SEED);
    Ok(etf_frame(classes, dim, mean_norm, &mut rng).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Labelled ID samples, class-major order, with logits `W h`.
    pub id: FeatureSet,
    pub ood: FeatureSet,
    /// Self-dual head: `W` = class means, `b` = 0.
    pub head: ClassifierHead,
    pub class_means: DMatrix<f64>,
    pub ood_mean: DVector<f64>,
}

/// ID train/test and OOD sets drawn around the same means.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: FeatureSet,
    pub test: FeatureSet,
    pub ood: FeatureSet,
    pub head: ClassifierHead,
}

struct Generator {
    rng: ChaCha20Rng,
    means: DMatrix<f64>,
    v_perp: DVector<f64>,
    head: ClassifierHead,
    free_dims: usize,
}

impl Generator {
    fn new(cfg: &EtfConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let (means, v_perp) = etf_frame(cfg.classes, cfg.dim, cfg.mean_norm, &mut rng);
        let head = ClassifierHead::new(means.clone(), None)?;
        let free_dims = layout(cfg.classes, cfg.dim).0;
        Ok(Generator {
            rng,
            means,
            v_perp,
            head,
            free_dims,
        })
    }

    fn id_set(&mut self, cfg: &EtfConfig, name: &str) -> Result<FeatureSet> {
        let n = cfg.classes * cfg.n_per_class;
        let mut x = DMatrix::zeros(n, cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i / cfg.n_per_class;
            labels.push(c as i64);
            for j in 0..cfg.dim {
                x[(i, j)] = self.means[(c, j)];
            }
            for j in 0..self.free_dims {
                x[(i, j)] += cfg.sigma_w * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        let logits = self.head.logits(&x)?;
        FeatureSet::new(name, x, Some(logits), Some(labels), Some(cfg.classes))
    }

    fn ood_mean(&self, cfg: &EtfConfig) -> DVector<f64> {
        let theta = cfg.ood_ortho_dev;
        let v_par = self.means.row(0).transpose().normalize();
        (&self.v_perp * (1.0 - theta * theta).sqrt() + v_par * theta) * cfg.mean_norm
    }

    fn ood_set(&mut self, cfg: &EtfConfig) -> Result<FeatureSet> {
        let mu = self.ood_mean(cfg);
        let sigma = cfg.ood_sigma();
        let mut x = DMatrix::zeros(cfg.ood_n, cfg.dim);
        for i in 0..cfg.ood_n {
            for j in 0..cfg.dim {
                x[(i, j)] = mu[j] + sigma * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        let logits = self.head.logits(&x)?;
        FeatureSet::new("ood", x, Some(logits), None, Some(cfg.classes))
    }
}

/// ID samples `μ_y + σ_w ε`, OOD samples around the configured OOD mean, and the self-dual head.
pub fn generate(cfg: &EtfConfig) -> Result<SyntheticData> {
    let mut g = Generator::new(cfg)?;
    let id = g.id_set(cfg, "id-train")?;
    let ood = g.ood_set(cfg)?;
    Ok(SyntheticData {
        ood_mean: g.ood_mean(cfg),
        id,
        ood,
        head: g.head,
        class_means: g.means,
    })
}

/// Like [`generate`], plus an independent ID test draw taken after the OOD samples.
pub fn generate_benchmark(cfg: &EtfConfig) -> Result<Benchmark> {
    let mut g = Generator::new(cfg)?;
    let train = g.id_set(cfg, "id-train")?;
    let ood = g.ood_set(cfg)?;
    let test = g.id_set(cfg, "id-test")?;
    Ok(Benchmark {
        train,
        test,
        ood,
        head: g.head,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    /// NECO raw score of the empirical OOD mean.
    pub ood_mean_raw: f64,
    /// Smallest NECO raw score over the ID samples.
    pub min_id_raw: f64,
}

impl TheoremReport {
    pub const OOD_TOL: f64 = 1e-6;
    pub const ID_MIN: f64 = 0.999;

    pub fn holds(&self) -> bool {
        self.ood_mean_raw <= Self::OOD_TOL && self.min_id_raw >= Self::ID_MIN
    }
}

/// Fits PCA with `d = C` on the ID samples and measures NECO on the OOD mean and the ID set.
pub fn theorem_oracle(cfg: &EtfConfig) -> Result<TheoremReport> {
    let data = generate(cfg)?;
    let ps = PrincipalSubspace::fit(&data.id, cfg.classes)?;
    let ood_mean = data.ood.mean();
    let ood_mean_raw = crate::scores::neco_raw(&ps, &ood_mean)?;
    let mut min_id_raw = f64::INFINITY;
    for i in 0..data.id.len() {
        min_id_raw = min_id_raw.min(crate::scores::neco_raw(&ps, &data.id.row(i))?);
    }
    Ok(TheoremReport {
        ood_mean_raw,
        min_id_raw,
    })
}
