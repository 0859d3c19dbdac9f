use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Post-hoc OOD detection over pre-extracted penultimate features.
#[derive(Debug, Parser)]
#[command(name = "neco-kit", version)]
pub struct Cli {
    /// JSON file with default values; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Hyper {
    /// Scoring method, or for `eval` a comma-separated list or `all`.
    #[arg(long)]
    pub method: Option<String>,
    /// ASH pruning percentile: the share of activations zeroed per sample.
    #[arg(long)]
    pub keep_percentile: Option<f64>,
    /// ReAct clipping percentile over the ID training activations.
    #[arg(long)]
    pub react_percentile: Option<f64>,
    /// ViM / Residual principal dimension.
    #[arg(long)]
    pub vim_dim: Option<usize>,
    /// NECO principal dimension (default: 90% explained variance).
    #[arg(long)]
    pub neco_dim: Option<usize>,
    /// Use the raw NECO ratio without the max-logit factor.
    #[arg(long)]
    pub no_maxlogit: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a scorer on ID training data and save it under OUT/<method>/.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset with a saved scorer and write a CSV.
    Score {
        /// Directory written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Adds an is_ood column: a sample is OOD unless its score exceeds this value.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit on ID train, score ID test and OOD, and write a JSON report.
    Eval {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
        /// Histogram bins for the first method's scores.
        #[arg(long)]
        bins: Option<usize>,
        /// Also write the histogram as CSV.
        #[arg(long, requires = "bins")]
        histogram: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// NECO AUROC / FPR95 across principal dimensions, as CSV.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        /// Comma-separated, strictly increasing (default: every d up to min(n, D)).
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long)]
        no_maxlogit: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Neural-collapse metrics of a labelled dataset as JSON.
    NcReport {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        ood: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded Simplex-ETF benchmark (id-train, id-test, ood).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        mean_norm: Option<f64>,
        #[arg(long)]
        sigma_w: Option<f64>,
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        ood_n: Option<usize>,
        #[arg(long)]
        ood_ortho_dev: Option<f64>,
        #[arg(long)]
        ood_sigma: Option<f64>,
    },
}
