//! On-disk bundles for fitted artifacts: NPY arrays plus a `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ClassifierHead;
use crate::npy::{self, Dtype};
use crate::scores::{Artifacts, FittedScorer, Method};
use crate::stats::ClassStatistics;
use crate::subspace::PrincipalSubspace;
use crate::SCHEMA_VERSION;

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

fn check_schema(path: &Path, schema: u32) -> Result<()> {
    if schema == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Manifest(format!(
            "{}: unsupported schema {schema}",
            path.display()
        )))
    }
}

fn save_mat(dir: &Path, name: &str, m: &DMatrix<f64>) -> Result<()> {
    npy::save_matrix(&dir.join(name), m, Dtype::F8)
}

#[derive(Debug, Serialize, Deserialize)]
struct SubspaceMeta {
    schema: u32,
    d: usize,
    #[serde(rename = "D")]
    ambient: usize,
    center_at_projection: bool,
    total_variance: f64,
    degenerate: bool,
}

pub fn save_subspace(dir: &Path, ps: &PrincipalSubspace) -> Result<()> {
    mkdir(dir)?;
    npy::save_vector(&dir.join("mean.npy"), &ps.mean)?;
    save_mat(dir, "basis.npy", &ps.basis)?;
    npy::save_vector(&dir.join("eigenvalues.npy"), &ps.eigenvalues)?;
    write_json(
        &dir.join("meta.json"),
        &SubspaceMeta {
            schema: SCHEMA_VERSION,
            d: ps.rank(),
            ambient: ps.ambient_dim(),
            center_at_projection: ps.center_at_projection,
            total_variance: ps.total_variance,
            degenerate: ps.degenerate,
        },
    )
}

pub fn load_subspace(dir: &Path) -> Result<PrincipalSubspace> {
    let meta_path = dir.join("meta.json");
    let meta: SubspaceMeta = read_json(&meta_path)?;
    check_schema(&meta_path, meta.schema)?;
    let ps = PrincipalSubspace {
        mean: npy::load_vector(&dir.join("mean.npy"))?,
        basis: npy::load_matrix(&dir.join("basis.npy"))?,
        eigenvalues: npy::load_vector(&dir.join("eigenvalues.npy"))?,
        total_variance: meta.total_variance,
        center_at_projection: meta.center_at_projection,
        degenerate: meta.degenerate,
    };
    if ps.basis.shape() != (meta.ambient, meta.d)
        || ps.mean.len() != meta.ambient
        || ps.eigenvalues.len() != meta.d
    {
        return Err(Error::Shape(format!(
            "{}: arrays disagree with d={} D={}",
            dir.display(),
            meta.d,
            meta.ambient
        )));
    }
    Ok(ps)
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsMeta {
    schema: u32,
    classes: usize,
    #[serde(rename = "D")]
    ambient: usize,
}

pub fn save_class_statistics(dir: &Path, cs: &ClassStatistics) -> Result<()> {
    mkdir(dir)?;
    npy::save_vector(&dir.join("global_mean.npy"), &cs.global_mean)?;
    save_mat(dir, "class_means.npy", &cs.class_means)?;
    npy::save_labels(&dir.join("class_counts.npy"), &cs.class_counts)?;
    save_mat(dir, "sigma_w.npy", &cs.sigma_w)?;
    save_mat(dir, "sigma_b.npy", &cs.sigma_b)?;
    save_mat(dir, "sigma_t.npy", &cs.sigma_t)?;
    write_json(
        &dir.join("meta.json"),
        &StatsMeta {
            schema: SCHEMA_VERSION,
            classes: cs.num_classes(),
            ambient: cs.dim(),
        },
    )
}

pub fn load_class_statistics(dir: &Path) -> Result<ClassStatistics> {
    let meta_path = dir.join("meta.json");
    let meta: StatsMeta = read_json(&meta_path)?;
    check_schema(&meta_path, meta.schema)?;
    let counts = npy::load_ints(&dir.join("class_counts.npy"))?;
    let cs = ClassStatistics {
        global_mean: npy::load_vector(&dir.join("global_mean.npy"))?,
        class_means: npy::load_matrix(&dir.join("class_means.npy"))?,
        class_counts: counts.into_iter().map(|c| c.max(0) as usize).collect(),
        sigma_w: npy::load_matrix(&dir.join("sigma_w.npy"))?,
        sigma_b: npy::load_matrix(&dir.join("sigma_b.npy"))?,
        sigma_t: npy::load_matrix(&dir.join("sigma_t.npy"))?,
    };
    if cs.class_means.shape() != (meta.classes, meta.ambient) {
        return Err(Error::Shape(format!("{}: class means shape mismatch", dir.display())));
    }
    Ok(cs)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScorerMeta {
    schema: u32,
    method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    use_maxlogit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    percentile: Option<f64>,
    has_head: bool,
}

/// Writes `scorer` into `root/<method>/` and returns that directory.
pub fn save_scorer(root: &Path, scorer: &FittedScorer) -> Result<PathBuf> {
    let dir = root.join(scorer.method.name());
    mkdir(&dir)?;
    let mut meta = ScorerMeta {
        schema: SCHEMA_VERSION,
        method: scorer.method,
        dim: scorer.dim(),
        use_maxlogit: None,
        alpha: None,
        threshold: None,
        percentile: None,
        has_head: scorer.head.is_some(),
    };
    if let Some(h) = &scorer.head {
        save_mat(&dir, "head_w.npy", h.weights())?;
        npy::save_vector(&dir.join("head_b.npy"), h.bias())?;
    }
    match &scorer.artifacts {
        Artifacts::None => {}
        Artifacts::Neco {
            subspace,
            use_maxlogit,
        } => {
            save_subspace(&dir.join("subspace"), subspace)?;
            meta.use_maxlogit = Some(*use_maxlogit);
        }
        Artifacts::Vim { subspace, alpha } => {
            save_subspace(&dir.join("subspace"), subspace)?;
            meta.alpha = Some(*alpha);
        }
        Artifacts::Residual { subspace } => save_subspace(&dir.join("subspace"), subspace)?,
        Artifacts::Nusa { row_basis } => save_mat(&dir, "row_basis.npy", row_basis)?,
        Artifacts::Mahalanobis {
            class_means,
            precision,
        } => {
            save_mat(&dir, "class_means.npy", class_means)?;
            save_mat(&dir, "precision.npy", precision)?;
        }
        Artifacts::KlMatching { class_probs } => save_mat(&dir, "class_probs.npy", class_probs)?,
        Artifacts::React { threshold } => meta.threshold = Some(*threshold),
        Artifacts::Ash { percentile } => meta.percentile = Some(*percentile),
    }
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(dir)
}

fn required<T>(v: Option<T>, dir: &Path, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::Manifest(format!("{}: meta.json lacks {field}", dir.display())))
}

/// Reads a scorer directory written by [`save_scorer`].
pub fn load_scorer(dir: &Path) -> Result<FittedScorer> {
    let meta_path = dir.join("meta.json");
    let meta: ScorerMeta = read_json(&meta_path)?;
    check_schema(&meta_path, meta.schema)?;
    let head = if meta.has_head {
        let w = npy::load_matrix(&dir.join("head_w.npy"))?;
        let b: DVector<f64> = npy::load_vector(&dir.join("head_b.npy"))?;
        Some(ClassifierHead::new(w, Some(b))?)
    } else {
        None
    };
    let load = |name: &str| npy::load_matrix(&dir.join(name));
    let artifacts = match meta.method {
        Method::Msp | Method::MaxLogit | Method::Energy | Method::GradNorm => Artifacts::None,
        Method::Neco => Artifacts::Neco {
            subspace: load_subspace(&dir.join("subspace"))?,
            use_maxlogit: required(meta.use_maxlogit, dir, "use_maxlogit")?,
        },
        Method::Vim => Artifacts::Vim {
            subspace: load_subspace(&dir.join("subspace"))?,
            alpha: required(meta.alpha, dir, "alpha")?,
        },
        Method::Residual => Artifacts::Residual {
            subspace: load_subspace(&dir.join("subspace"))?,
        },
        Method::Nusa => Artifacts::Nusa {
            row_basis: load("row_basis.npy")?,
        },
        Method::Mahalanobis => Artifacts::Mahalanobis {
            class_means: load("class_means.npy")?,
            precision: load("precision.npy")?,
        },
        Method::KlMatching => Artifacts::KlMatching {
            class_probs: load("class_probs.npy")?,
        },
        Method::React => Artifacts::React {
            threshold: required(meta.threshold, dir, "threshold")?,
        },
        Method::AshP | Method::AshB | Method::AshS => Artifacts::Ash {
            percentile: required(meta.percentile, dir, "percentile")?,
        },
    };
    if meta.method.needs_head() && head.is_none() {
        return Err(Error::MissingHead);
    }
    Ok(FittedScorer {
        method: meta.method,
        head,
        artifacts,
    })
}
