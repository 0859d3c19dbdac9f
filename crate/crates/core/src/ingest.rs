//! Loading and validating feature dumps.
//!
//! A dataset on disk is described by a JSON manifest naming the feature,
//! logit and label files (NPY, or headerless CSV as a fallback) together with
//! the declared dtype and shape of the feature matrix. Everything is widened
//! to `f64` on load.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy::{self, Dtype};

/// Penultimate-layer activations of `n` samples, with optional logits and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub name: String,
    features: DMatrix<f64>,
    logits: Option<DMatrix<f64>>,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl FeatureSet {
    /// Builds a validated feature set.
    ///
    /// The class count is taken from `num_classes` when given, otherwise from the
    /// logit width, otherwise from the largest label.
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        logits: Option<DMatrix<f64>>,
        labels: Option<Vec<i64>>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let name = name.into();
        let (n, d) = features.shape();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "{name}: feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        check_finite(&features, &format!("{name} features"))?;
        if let Some(l) = &logits {
            if l.nrows() != n {
                return Err(Error::Shape(format!(
                    "{name}: {} logit rows for {n} samples",
                    l.nrows()
                )));
            }
            if l.ncols() == 0 {
                return Err(Error::Shape(format!("{name}: logits have no columns")));
            }
            if let Some(c) = num_classes {
                if c != l.ncols() {
                    return Err(Error::Shape(format!(
                        "{name}: {} logit columns but {c} classes declared",
                        l.ncols()
                    )));
                }
            }
            check_finite(l, &format!("{name} logits"))?;
        }
        let num_classes = num_classes.or(logits.as_ref().map(|l| l.ncols()));
        let labels = match labels {
            None => None,
            Some(raw) => {
                if raw.len() != n {
                    return Err(Error::Shape(format!(
                        "{name}: {} labels for {n} samples",
                        raw.len()
                    )));
                }
                let bound = num_classes.unwrap_or(usize::MAX);
                let mut out = Vec::with_capacity(n);
                for &l in &raw {
                    if l < 0 || l as u64 >= bound as u64 {
                        return Err(Error::LabelOutOfRange {
                            label: l,
                            classes: num_classes.unwrap_or(0),
                        });
                    }
                    out.push(l as usize);
                }
                Some(out)
            }
        };
        let num_classes = num_classes.or_else(|| {
            labels
                .as_ref()
                .map(|l| l.iter().copied().max().unwrap_or(0) + 1)
        });
        Ok(FeatureSet {
            name,
            features,
            logits,
            labels,
            num_classes,
        })
    }

    /// Features only, unlabelled.
    pub fn from_features(name: impl Into<String>, features: DMatrix<f64>) -> Result<Self> {
        Self::new(name, features, None, None, None)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn logits(&self) -> Option<&DMatrix<f64>> {
        self.logits.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// Same samples with logits replaced (or attached).
    pub fn with_logits(mut self, logits: DMatrix<f64>) -> Result<Self> {
        if logits.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "{}: {} logit rows for {} samples",
                self.name,
                logits.nrows(),
                self.len()
            )));
        }
        check_finite(&logits, &format!("{} logits", self.name))?;
        self.num_classes = Some(logits.ncols());
        self.logits = Some(logits);
        Ok(self)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let pick = |m: &DMatrix<f64>| {
            DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
        };
        FeatureSet::new(
            self.name.clone(),
            pick(&self.features),
            self.logits.as_ref().map(pick),
            self.labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r] as i64).collect()),
            self.num_classes,
        )
    }

    /// Multiplies every feature by `factor`; logits are left untouched.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        out.features *= factor;
        check_finite(&out.features, &out.name)?;
        Ok(out)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.features.row_mean().transpose()
    }
}

/// Final linear layer: `logits = W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl ClassifierHead {
    pub fn new(weights: DMatrix<f64>, bias: Option<DVector<f64>>) -> Result<Self> {
        let (c, d) = weights.shape();
        if c == 0 || d == 0 {
            return Err(Error::Shape(format!("head weights must be non-empty, got {c}x{d}")));
        }
        check_finite(&weights, "head weights")?;
        let bias = match bias {
            Some(b) => {
                if b.len() != c {
                    return Err(Error::Shape(format!("head bias has {} entries for {c} classes", b.len())));
                }
                if !b.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("head bias".into()));
                }
                b
            }
            None => DVector::zeros(c),
        };
        Ok(ClassifierHead { weights, bias })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == self.dim() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "head expects {}-dimensional features, got {d}",
                self.dim()
            )))
        }
    }

    pub fn logits_for(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.weights * h + &self.bias
    }

    /// `n x C` logits for every row of `features`.
    pub fn logits(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(features.ncols())?;
        let mut out = features * self.weights.transpose();
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "id-train")]
    IdTrain,
    #[serde(rename = "id-test")]
    IdTest,
    #[serde(rename = "ood")]
    Ood,
}

/// JSON description of one dataset dump. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub role: Role,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub dtype: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_w: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_b: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if m.shape.len() != 2 {
            return Err(Error::Manifest(format!(
                "{}: shape must have two entries, got {:?}",
                path.display(),
                m.shape
            )));
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn is_csv(p: &Path) -> bool {
    p.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

/// Parses headerless comma-separated numeric rows.
pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    Error::Csv(format!("{}:{}: bad number {t:?}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Csv(format!(
                    "{}:{}: expected {c} columns, found {}",
                    path.display(),
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

fn load_matrix_any(path: &Path) -> Result<DMatrix<f64>> {
    exists(path)?;
    if is_csv(path) {
        read_csv_matrix(path)
    } else {
        npy::load_matrix(path)
    }
}

fn load_labels_any(path: &Path) -> Result<Vec<i64>> {
    exists(path)?;
    if is_csv(path) {
        let m = read_csv_matrix(path)?;
        if m.ncols() > 1 {
            return Err(Error::Shape(format!("{}: labels must be one column", path.display())));
        }
        m.iter()
            .map(|&v| {
                if v.fract() == 0.0 {
                    Ok(v as i64)
                } else {
                    Err(Error::Csv(format!("{}: non-integral label {v}", path.display())))
                }
            })
            .collect()
    } else {
        npy::load_ints(path)
    }
}

/// Loads and validates the dataset a manifest describes.
pub fn load_feature_set(manifest: &DatasetManifest) -> Result<FeatureSet> {
    let fpath = manifest.resolve(&manifest.features);
    exists(&fpath)?;
    let features = if is_csv(&fpath) {
        read_csv_matrix(&fpath)?
    } else {
        let arr = npy::read_path(&fpath)?;
        let descr = arr.header().dtype.descr();
        if descr != manifest.dtype {
            return Err(Error::Manifest(format!(
                "{}: declared dtype {} but file holds {descr}",
                manifest.name, manifest.dtype
            )));
        }
        match arr {
            npy::NpyArray::Float { header, data } if header.shape.len() == 2 => {
                DMatrix::from_row_slice(header.shape[0], header.shape[1], &data)
            }
            other => {
                return Err(Error::Shape(format!(
                    "{}: features must be a 2-D float array, found {:?} {:?}",
                    manifest.name,
                    other.header().dtype,
                    other.shape()
                )))
            }
        }
    };
    if [features.nrows(), features.ncols()] != manifest.shape[..] {
        return Err(Error::Shape(format!(
            "{}: declared shape {:?} but features are {}x{}",
            manifest.name,
            manifest.shape,
            features.nrows(),
            features.ncols()
        )));
    }
    let logits = manifest
        .logits
        .as_ref()
        .map(|p| load_matrix_any(&manifest.resolve(p)))
        .transpose()?;
    let labels = manifest
        .labels
        .as_ref()
        .map(|p| load_labels_any(&manifest.resolve(p)))
        .transpose()?;
    let num_classes = match (manifest.num_classes, &manifest.head_w) {
        (Some(c), _) => Some(c),
        (None, Some(_)) if logits.is_none() => Some(load_head(manifest)?.unwrap().num_classes()),
        _ => None,
    };
    FeatureSet::new(manifest.name.clone(), features, logits, labels, num_classes)
}

/// Loads the classifier head a manifest points at, if any.
pub fn load_head(manifest: &DatasetManifest) -> Result<Option<ClassifierHead>> {
    let Some(w) = &manifest.head_w else {
        return Ok(None);
    };
    let weights = load_matrix_any(&manifest.resolve(w))?;
    let bias = match &manifest.head_b {
        Some(b) => {
            let p = manifest.resolve(b);
            exists(&p)?;
            Some(if is_csv(&p) {
                let m = read_csv_matrix(&p)?;
                DVector::from_iterator(m.len(), m.iter().copied())
            } else {
                npy::load_vector(&p)?
            })
        }
        None => None,
    };
    ClassifierHead::new(weights, bias).map(Some)
}

/// Writes a feature set (and optionally a head) as `<dir>/*.npy` plus `manifest.json`.
///
/// Returns the manifest path.
pub fn write_feature_set(
    dir: &Path,
    fs_: &FeatureSet,
    role: Role,
    head: Option<&ClassifierHead>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    npy::save_matrix(&dir.join("features.npy"), fs_.features(), Dtype::F8)?;
    let mut manifest = DatasetManifest {
        name: fs_.name.clone(),
        role,
        features: "features.npy".into(),
        logits: None,
        labels: None,
        dtype: Dtype::F8.descr().into(),
        shape: vec![fs_.len(), fs_.dim()],
        num_classes: fs_.num_classes(),
        head_w: None,
        head_b: None,
        base_dir: dir.to_path_buf(),
    };
    if let Some(l) = fs_.logits() {
        npy::save_matrix(&dir.join("logits.npy"), l, Dtype::F8)?;
        manifest.logits = Some("logits.npy".into());
    }
    if let Some(l) = fs_.labels() {
        npy::save_labels(&dir.join("labels.npy"), l)?;
        manifest.labels = Some("labels.npy".into());
    }
    if let Some(h) = head {
        npy::save_matrix(&dir.join("head_w.npy"), h.weights(), Dtype::F8)?;
        npy::save_vector(&dir.join("head_b.npy"), h.bias())?;
        manifest.head_w = Some("head_w.npy".into());
        manifest.head_b = Some("head_b.npy".into());
    }
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// Per-class row blocks plus the original row index of every block row.
#[derive(Debug, Clone)]
pub struct Partition {
    pub blocks: Vec<DMatrix<f64>>,
    pub rows: Vec<Vec<usize>>,
}

impl Partition {
    /// Undoes the partition: rows go back to their recorded positions.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n: usize = self.rows.iter().map(Vec::len).sum();
        let d = self.blocks.first().map(|b| b.ncols()).unwrap_or(0);
        let mut out = DMatrix::zeros(n, d);
        for (block, rows) in self.blocks.iter().zip(&self.rows) {
            for (i, &r) in rows.iter().enumerate() {
                out.set_row(r, &block.row(i));
            }
        }
        out
    }
}

/// Splits the feature matrix by label, one block per class id in ascending order.
pub fn partition_by_label(fs_: &FeatureSet) -> Result<Partition> {
    let labels = fs_.labels().ok_or(Error::MissingLabels)?;
    let c = fs_.num_classes().unwrap_or(0);
    let mut rows = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        rows[l].push(i);
    }
    let x = fs_.features();
    let blocks = rows
        .iter()
        .map(|idx| DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)]))
        .collect();
    Ok(Partition { blocks, rows })
}
