use std::fmt::Write as _;
use std::path::Path;

use neco_core::eval::{self, EvalReport};
use neco_core::ingest::{load_feature_set, load_head, write_feature_set};
use neco_core::synthetic::{generate_benchmark, EtfConfig};
use neco_core::{nc, persist};
use neco_core::{ClassifierHead, DatasetManifest, Error, FeatureSet, FittedScorer, Result, Role};

use crate::args::{Cli, Command, Hyper};
use crate::config::{resolve, FileConfig};

fn load(path: &Path) -> Result<(FeatureSet, Option<ClassifierHead>)> {
    let manifest = DatasetManifest::load(path)?;
    Ok((load_feature_set(&manifest)?, load_head(&manifest)?))
}

/// Writes to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Fit { train, hyper, out } => fit(&train, &hyper, &file, &out),
        Command::Score {
            model,
            data,
            threshold,
            out,
        } => score(&model, &data, threshold.or(file.threshold), out.as_deref()),
        Command::Eval {
            train,
            id,
            ood,
            hyper,
            bins,
            histogram,
            out,
        } => evaluate(
            &train,
            &id,
            &ood,
            &hyper,
            &file,
            bins.or(file.bins),
            histogram.as_deref(),
            out.as_deref(),
        ),
        Command::Sweep {
            train,
            id,
            ood,
            dims,
            no_maxlogit,
            out,
        } => {
            let dims = if dims.is_empty() {
                file.dims.clone().unwrap_or_default()
            } else {
                dims
            };
            let hyper = Hyper {
                no_maxlogit,
                ..Hyper::default()
            };
            sweep(&train, &id, &ood, dims, &hyper, &file, out.as_deref())
        }
        Command::NcReport { train, ood, out } => nc_report(&train, ood.as_deref(), out.as_deref()),
        Command::Synth {
            out,
            seed,
            classes,
            dim,
            mean_norm,
            sigma_w,
            n_per_class,
            ood_n,
            ood_ortho_dev,
            ood_sigma,
        } => {
            let mut cfg = file.synth.clone().unwrap_or_default();
            cfg.seed = seed.or(file.seed).unwrap_or(cfg.seed);
            cfg.classes = classes.unwrap_or(cfg.classes);
            cfg.dim = dim.unwrap_or(cfg.dim);
            cfg.mean_norm = mean_norm.unwrap_or(cfg.mean_norm);
            cfg.sigma_w = sigma_w.unwrap_or(cfg.sigma_w);
            cfg.n_per_class = n_per_class.unwrap_or(cfg.n_per_class);
            cfg.ood_n = ood_n.unwrap_or(cfg.ood_n);
            cfg.ood_ortho_dev = ood_ortho_dev.unwrap_or(cfg.ood_ortho_dev);
            cfg.ood_sigma = ood_sigma.or(cfg.ood_sigma);
            synth(&cfg, &out)
        }
    }
}

fn fit(train: &Path, hyper: &Hyper, file: &FileConfig, out: &Path) -> Result<()> {
    let r = resolve(hyper, file, false)?;
    let (fs, head) = load(train)?;
    let scorer = FittedScorer::fit(r.methods[0], &fs, head.as_ref(), &r.params)?;
    let dir = persist::save_scorer(out, &scorer)?;
    eprintln!("saved {} scorer to {}", scorer.method, dir.display());
    Ok(())
}

fn score(model: &Path, data: &Path, threshold: Option<f64>, out: Option<&Path>) -> Result<()> {
    let scorer = persist::load_scorer(model)?;
    let (fs, head) = load(data)?;
    let fs = match (fs.logits(), scorer.head.as_ref().or(head.as_ref())) {
        (None, Some(h)) => {
            let logits = h.logits(fs.features())?;
            fs.with_logits(logits)?
        }
        _ => fs,
    };
    let sv = scorer.score(&fs)?;
    let mut csv = String::from(if threshold.is_some() {
        "index,score,is_ood\n"
    } else {
        "index,score\n"
    });
    let flags = threshold.map(|t| sv.is_ood(t));
    for (i, s) in sv.scores.iter().enumerate() {
        match &flags {
            Some(f) => writeln!(csv, "{i},{s},{}", f[i]).unwrap(),
            None => writeln!(csv, "{i},{s}").unwrap(),
        }
    }
    emit(out, &csv)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    train: &Path,
    id: &Path,
    ood: &Path,
    hyper: &Hyper,
    file: &FileConfig,
    bins: Option<usize>,
    histogram: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let r = resolve(hyper, file, true)?;
    let (train_fs, head) = load(train)?;
    let (id_fs, _) = load(id)?;
    let (ood_fs, _) = load(ood)?;
    let mut rows = Vec::new();
    let mut first = None;
    for &m in &r.methods {
        let scorer = FittedScorer::fit(m, &train_fs, head.as_ref(), &r.params)?;
        let s_id = scorer.score(&id_fs)?;
        let s_ood = scorer.score(&ood_fs)?;
        rows.push(eval::evaluate(&s_id, &s_ood)?);
        if first.is_none() {
            first = Some((s_id, s_ood));
        }
    }
    let mut report = EvalReport::new(rows);
    if let (Some(b), Some((s_id, s_ood))) = (bins, first) {
        let hist = eval::histogram(&s_id.scores, &s_ood.scores, b)?;
        if let Some(p) = histogram {
            emit(Some(p), &eval::histogram_csv(&hist))?;
        }
        report.histogram = Some(hist);
    }
    emit(out, &report.to_json()?)
}

fn sweep(
    train: &Path,
    id: &Path,
    ood: &Path,
    dims: Vec<usize>,
    hyper: &Hyper,
    file: &FileConfig,
    out: Option<&Path>,
) -> Result<()> {
    let r = resolve(hyper, file, false)?;
    let (train_fs, head) = load(train)?;
    let (id_fs, _) = load(id)?;
    let (ood_fs, _) = load(ood)?;
    let dims = if dims.is_empty() {
        (1..=train_fs.len().min(train_fs.dim())).collect()
    } else {
        dims
    };
    let s = eval::sweep_dimension(&train_fs, &id_fs, &ood_fs, head.as_ref(), &dims, &r.params)?;
    eprintln!("best d = {}", s.best_d);
    emit(out, &eval::sweep_csv(&s.rows))
}

fn nc_report(train: &Path, ood: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (fs, head) = load(train)?;
    let ood_fs = ood.map(load).transpose()?.map(|(f, _)| f);
    let report = nc::nc_report(&fs, head.as_ref(), ood_fs.as_ref())?;
    emit(out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn synth(cfg: &EtfConfig, out: &Path) -> Result<()> {
    let b = generate_benchmark(cfg)?;
    for (name, fs, role) in [
        ("id-train", &b.train, Role::IdTrain),
        ("id-test", &b.test, Role::IdTest),
        ("ood", &b.ood, Role::Ood),
    ] {
        let path = write_feature_set(&out.join(name), fs, role, Some(&b.head))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
