//! Post-hoc out-of-distribution scoring over pre-extracted penultimate features.
//!
//! The crate is organised bottom-up:
//!
//! - [`ingest`]: NPY/CSV/manifest loading into validated [`FeatureSet`]s.
//! - [`stats`]: class means, within/between/total covariances, pseudoinverse.
//! - [`subspace`]: PCA principal subspace used by NECO and ViM.
//! - [`nc`]: neural-collapse diagnostics NC1 to NC5.
//! - [`scores`]: NECO and the baseline catalog, all oriented "higher = ID".
//! - [`eval`]: AUROC, FPR at a TPR level, dimension sweeps, reports.
//! - [`synthetic`]: seeded Simplex-ETF datasets with a controllable OOD cluster.
//! - [`persist`]: on-disk bundles for fitted artifacts.

pub mod error;
pub mod eval;
pub mod ingest;
pub mod nc;
pub mod npy;
pub mod persist;
pub mod scores;
pub mod stats;
pub mod subspace;
pub mod synthetic;

mod par;

pub use error::{Error, Result};
pub use ingest::{ClassifierHead, DatasetManifest, FeatureSet, Role};
pub use scores::{FittedScorer, Method, ScoreVector, ScorerParams};
pub use stats::ClassStatistics;
pub use subspace::PrincipalSubspace;

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
