//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use neco_core::eval::{auroc, fpr_at_tpr};
use neco_core::nc;
use neco_core::scores::{
    energy, gradnorm, kl_matching, mahalanobis, msp, nusa, row_space_basis, softmax, vim_alpha,
    Method, Shaping,
};
use neco_core::stats::{class_statistics, pseudo_inverse};
use neco_core::synthetic::{generate, generate_benchmark, simplex_etf_means, theorem_oracle, EtfConfig};
use neco_core::{FittedScorer, PrincipalSubspace, ScorerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    ensure(
        elapsed < limit,
        format!("{detail}; {:.3}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

fn theorem() -> Outcome {
    let start = Instant::now();
    let cfg = EtfConfig {
        classes: 10,
        dim: 64,
        sigma_w: 1e-6,
        ood_ortho_dev: 0.0,
        ..EtfConfig::default()
    };
    let r = theorem_oracle(&cfg).map_err(|e| e.to_string())?;
    let detail = format!(
        "NECO_raw(ood mean) = {:.3e}, min ID NECO_raw = {:.12}",
        r.ood_mean_raw, r.min_id_raw
    );
    ensure(r.holds(), detail.clone())?;
    within(start.elapsed(), Duration::from_secs(5), detail)
}

fn orthogonal_pairs() -> Outcome {
    let start = Instant::now();
    let data = generate(&EtfConfig::default()).map_err(|e| e.to_string())?;
    let ps = PrincipalSubspace::fit_full(&data.id).map_err(|e| e.to_string())?;
    let dim = ps.ambient_dim();
    if ps.rank() != dim {
        return Err(format!("basis has rank {} in R^{dim}", ps.rank()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let y = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let y = (&y - &x * x.dot(&y)).normalize();
        let px = ps.project(&x).unwrap();
        let py = ps.project(&y).unwrap();
        worst = worst.max(px.dot(&py).abs());
    }
    let detail = format!("max |<Px, Py>| over 1000 pairs = {worst:.3e}");
    ensure(worst < 1e-9, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(5), detail)
}

fn nc_zero_points() -> Outcome {
    let cfg = EtfConfig {
        sigma_w: 0.0,
        ood_sigma: Some(0.0),
        n_per_class: 20,
        ood_n: 20,
        ..EtfConfig::default()
    };
    let data = generate(&cfg).map_err(|e| e.to_string())?;
    let r = nc::nc_report(&data.id, Some(&data.head), Some(&data.ood)).map_err(|e| e.to_string())?;
    let nc3 = r.nc3_self_duality.unwrap();
    let nc5 = r.nc5_orthodev.unwrap();
    let detail = format!(
        "nc1={:.2e} nc2_equinorm={:.2e} nc2_equiangularity={:.2e} nc3={:.2e} nc4={} nc5={:.2e}",
        r.nc1, r.nc2_equinorm, r.nc2_equiangularity, nc3, r.nc4_ncc_mismatch, nc5
    );
    // nc3 compares normalized means before and after subtracting a global mean that is zero only up to rounding
    ensure(
        r.nc1 < 1e-8
            && r.nc2_equinorm < 1e-12
            && r.nc2_equiangularity < 1e-12
            && nc3 < 1e-24
            && r.nc4_ncc_mismatch == 0.0
            && nc5 < 1e-12,
        detail,
    )
}

fn simplex_cosines() -> Outcome {
    let mut worst: f64 = 0.0;
    for c in [2usize, 3, 4, 10] {
        for d in [c, 64] {
            let m = simplex_etf_means(c, d, 1.0).map_err(|e| e.to_string())?;
            let target = -1.0 / (c as f64 - 1.0);
            for i in 0..c {
                for j in i + 1..c {
                    let cos = m.row(i).dot(&m.row(j)) / (m.row(i).norm() * m.row(j).norm());
                    worst = worst.max((cos - target).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-12, format!("max |cos + 1/(C-1)| = {worst:.3e} for C in {{2,3,4,10}}"))
}

fn pair_count_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

fn counting_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    // largest ID value t with #{id >= t} / n >= 0.95, compared in integers
    let n = id.len();
    let t = id
        .iter()
        .copied()
        .filter(|&t| 100 * id.iter().filter(|&&v| v >= t).count() >= 95 * n)
        .fold(f64::NEG_INFINITY, f64::max);
    ood.iter().filter(|&&v| v >= t).count() as f64 / ood.len() as f64
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n_id = rng.random_range(1..=200);
        let n_ood = rng.random_range(1..=200);
        // half the instances draw from a small integer range to force ties
        let draw = |rng: &mut ChaCha8Rng, shift: f64| -> f64 {
            if k % 2 == 0 {
                f64::from(rng.random_range(0..8)) + shift.round()
            } else {
                rng.random_range(-1.0..1.0) + shift
            }
        };
        let shift = rng.random_range(0.0..2.0);
        let id: Vec<f64> = (0..n_id).map(|_| draw(&mut rng, shift)).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| draw(&mut rng, 0.0)).collect();
        let fast = auroc(&id, &ood).unwrap();
        worst = worst.max((fast - pair_count_auroc(&id, &ood)).abs());
        let fpr = fpr_at_tpr(&id, &ood, 0.95).unwrap();
        let oracle = counting_fpr95(&id, &ood);
        if fpr != oracle {
            return Err(format!("instance {k}: FPR95 {fpr} vs counting oracle {oracle}"));
        }
    }
    ensure(
        worst <= 1e-12,
        format!("100 instances; max AUROC deviation {worst:.3e}; FPR95 identical"),
    )
}

fn penrose() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let rows = rng.random_range(1..=50);
        let cols = rng.random_range(1..=50);
        let mut uniform = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        // every third matrix is rank-deficient
        let a = if k % 3 == 0 {
            let rank = (rows.min(cols) / 2).max(1);
            uniform(rows, rank) * uniform(rank, cols)
        } else {
            uniform(rows, cols)
        };
        let x = pseudo_inverse(&a).map_err(|e| e.to_string())?;
        let ax = &a * &x;
        let xa = &x * &a;
        let errs = [
            (&ax * &a - &a).amax(),
            (&xa * &x - &x).amax(),
            (&ax - ax.transpose()).amax(),
            (&xa - xa.transpose()).amax(),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
    }
    ensure(worst < 1e-8, format!("50 matrices up to 50x50; max Penrose residual {worst:.3e}"))
}

fn kl_uniform_objective(w: &DMatrix<f64>, b: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let logits = w * h + b;
    let p = softmax(logits.as_slice());
    let u = 1.0 / p.len() as f64;
    p.iter().map(|&pk| u * (u / pk).ln()).sum()
}

fn gradnorm_fd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let w = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let h = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
        let mut l1 = 0.0;
        for i in 0..3 {
            for j in 0..5 {
                let mut wp = w.clone();
                wp[(i, j)] += eps;
                let mut wm = w.clone();
                wm[(i, j)] -= eps;
                l1 += ((kl_uniform_objective(&wp, &b, &h) - kl_uniform_objective(&wm, &b, &h)) / (2.0 * eps)).abs();
            }
        }
        let closed = gradnorm((&w * &h + &b).as_slice(), h.as_slice());
        worst = worst.max((closed - l1).abs() / l1.abs().max(1e-300));
    }
    ensure(worst < 1e-4, format!("20 instances (C=3, D=5); max relative error {worst:.3e}"))
}

fn hand_values() -> Outcome {
    let mut fails = Vec::new();
    fn check(fails: &mut Vec<String>, name: &str, got: f64, want: f64, tol: f64) {
        if (got - want).abs() > tol {
            fails.push(format!("{name}: got {got}, want {want}"));
        }
    }
    check(&mut fails, "energy [0,0]", energy(&[0.0, 0.0]), 2f64.ln(), 1e-15);
    check(&mut fails, "msp [0,0]", msp(&[0.0, 0.0]), 0.5, 1e-15);
    check(&mut fails, "msp [ln3,0]", msp(&[3f64.ln(), 0.0]), 0.75, 1e-15);
    check(&mut fails, "energy [ln3,0]", energy(&[3f64.ln(), 0.0]), 4f64.ln(), 1e-15);
    check(&mut fails, "msp [1000,0]", msp(&[1000.0, 0.0]), 1.0, 1e-15);

    let ash_b = Shaping::AshB { percentile: 50.0 }.apply(&[4.0, 3.0, 2.0, 1.0]).unwrap();
    if ash_b != [5.0, 5.0, 0.0, 0.0] {
        fails.push(format!("ash-b: got {ash_b:?}"));
    }
    let ash_p = Shaping::AshP { percentile: 50.0 }.apply(&[4.0, 3.0, 2.0, 1.0]).unwrap();
    if ash_p != [4.0, 3.0, 0.0, 0.0] {
        fails.push(format!("ash-p: got {ash_p:?}"));
    }
    let ash_s = Shaping::AshS { percentile: 50.0 }.apply(&[4.0, 3.0, 2.0, 1.0]).unwrap();
    let f = (10.0f64 / 7.0).exp();
    check(&mut fails, "ash-s[0]", ash_s[0], 4.0 * f, 1e-12);
    check(&mut fails, "ash-s[1]", ash_s[1], 3.0 * f, 1e-12);

    check(&mut fails, "vim alpha", vim_alpha(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 2.0, 0.0);

    let means = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    check(&mut fails, "mahalanobis", mahalanobis(&means, &DMatrix::identity(2, 2), &DVector::zeros(2)), -1.0, 0.0);

    let kl = kl_matching(&DMatrix::from_element(1, 2, 0.5), &[3f64.ln(), 0.0]).unwrap();
    check(&mut fails, "kl-matching", kl, -0.1308, 1e-4);

    let basis = row_space_basis(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
    check(&mut fails, "nusa", nusa(&basis, &DVector::from_vec(vec![1.0, 1.0])).unwrap(), 0.5f64.sqrt(), 1e-15);

    check(&mut fails, "gradnorm", gradnorm(&[3f64.ln(), 0.0], &[2.0, -1.0]), 1.5, 1e-15);

    let ps = PrincipalSubspace {
        mean: DVector::zeros(3),
        basis: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        eigenvalues: DVector::from_element(1, 1.0),
        total_variance: 1.0,
        center_at_projection: false,
        degenerate: false,
    };
    let h = DVector::from_vec(vec![1.0, 0.0, 1.0]);
    check(&mut fails, "neco raw", neco_core::scores::neco_raw(&ps, &h).unwrap(), 0.5f64.sqrt(), 1e-15);
    check(&mut fails, "neco", neco_core::scores::neco(&ps, &h, Some(2.0)).unwrap(), 2f64.sqrt(), 1e-15);

    let stat_fs = |rows: &[f64], labels: Vec<i64>| {
        let fs = neco_core::FeatureSet::new("t", DMatrix::from_row_slice(labels.len(), 2, rows), None, Some(labels), None).unwrap();
        class_statistics(&fs).unwrap()
    };
    let cs = stat_fs(&[0.0, 0.0, 2.0, 0.0], vec![0, 0]);
    check(&mut fails, "sigma_w single class", cs.sigma_w[(0, 0)], 1.0, 0.0);

    ensure(fails.is_empty(), if fails.is_empty() { "all catalog examples match".into() } else { fails.join("; ") })
}

fn separable_benchmark() -> Outcome {
    let start = Instant::now();
    let b = generate_benchmark(&EtfConfig::default()).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for m in Method::ALL {
        let s = FittedScorer::fit(m, &b.train, Some(&b.head), &ScorerParams::default()).map_err(|e| format!("{m}: {e}"))?;
        let a = auroc(&s.score(&b.test).unwrap().scores, &s.score(&b.ood).unwrap().scores).unwrap();
        let floor = if m == Method::Neco { 0.999 } else { 0.95 };
        ok &= a >= floor;
        lines.push(format!("{m}={a:.4}"));
    }
    let detail = format!("AUROC {}", lines.join(" "));
    ensure(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_neco-kit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("neco-kit {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    run_cli(&["synth", "--seed", "42", "--n-per-class", "40", "--ood-n", "200", "--out", &p("data")])?;
    let (train, id, ood) = (p("data/id-train/manifest.json"), p("data/id-test/manifest.json"), p("data/ood/manifest.json"));
    run_cli(&["fit", "--train", &train, "--method", "neco", "--out", &p("model")])?;
    run_cli(&["score", "--model", &p("model/neco"), "--data", &ood, "--threshold", "1", "--out", &p("scores.csv")])?;
    run_cli(&["eval", "--train", &train, "--id", &id, "--ood", &ood, "--method", "all", "--bins", "20", "--histogram", &p("hist.csv"), "--out", &p("report.json")])?;
    run_cli(&["sweep", "--train", &train, "--id", &id, "--ood", &ood, "--dims", "1,5,10,20", "--out", &p("sweep.csv")])?;
    run_cli(&["nc-report", "--train", &train, "--ood", &ood, "--out", &p("nc.json")])?;
    Ok(())
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let fa = files(a.path());
    let fb = files(b.path());
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    ensure(
        fa == fb && !fa.is_empty(),
        format!("{} artifacts from synth/fit/score/eval/sweep/nc-report compared byte for byte", names.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("theorem: collapse + orthogonal OOD gives NECO separation", theorem),
        ("full basis preserves orthogonality", orthogonal_pairs),
        ("NC zero-points on exact collapse", nc_zero_points),
        ("simplex ETF cosines", simplex_cosines),
        ("AUROC / FPR95 counting oracles", auroc_oracle),
        ("pseudoinverse Penrose conditions", penrose),
        ("GradNorm vs finite differences", gradnorm_fd),
        ("score-catalog hand values", hand_values),
        ("separable synthetic benchmark", separable_benchmark),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(d) => println!("PASS [{:>2}] {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
