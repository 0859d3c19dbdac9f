use std::path::Path;

use neco_core::synthetic::EtfConfig;
use neco_core::{Error, Method, Result, ScorerParams};
use serde::Deserialize;

use crate::args::Hyper;

/// Values accepted from `--config`. Keys mirror the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<String>,
    pub keep_percentile: Option<f64>,
    pub react_percentile: Option<f64>,
    pub vim_dim: Option<usize>,
    pub neco_dim: Option<usize>,
    pub no_maxlogit: Option<bool>,
    pub threshold: Option<f64>,
    pub bins: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub synth: Option<EtfConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }
}

/// Resolved method list and hyperparameters.
pub struct Resolved {
    pub methods: Vec<Method>,
    pub params: ScorerParams,
}

pub fn resolve(hyper: &Hyper, file: &FileConfig, allow_many: bool) -> Result<Resolved> {
    let spec = hyper
        .method
        .clone()
        .or_else(|| file.method.clone())
        .unwrap_or_else(|| "neco".into());
    let methods: Vec<Method> = if spec == "all" {
        Method::ALL.to_vec()
    } else {
        spec.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?
    };
    if methods.is_empty() || (!allow_many && methods.len() != 1) {
        return Err(Error::InvalidParameter(format!(
            "expected a single method, got {spec:?}"
        )));
    }
    let keep = hyper.keep_percentile.or(file.keep_percentile);
    let params = ScorerParams {
        neco_dim: hyper.neco_dim.or(file.neco_dim),
        use_maxlogit: !(hyper.no_maxlogit || file.no_maxlogit.unwrap_or(false)),
        vim_dim: hyper.vim_dim.or(file.vim_dim),
        react_percentile: hyper
            .react_percentile
            .or(file.react_percentile)
            .unwrap_or(ScorerParams::default().react_percentile),
        ash_percentile: keep,
        ..ScorerParams::default()
    };
    Ok(Resolved { methods, params })
}
