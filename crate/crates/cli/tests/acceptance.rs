//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run alone with `cargo test -p mixb2d-cli --test acceptance`;
//! pass criterion numbers as arguments to run a subset.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mixb2d::baselines::{
    glram_fit, mixppca_fit, GlramConfig, GlramModel, MixPpcaConfig, MixPpcaModel,
};
use mixb2d::data::{load_idx, SampleSet};
use mixb2d::eval::{
    clustering_accuracy, run_recognition, synth_generate, table_cell, ModelKind, RecognitionConfig,
    SyntheticSpec,
};
use mixb2d::linalg::stein_solve;
use mixb2d::matvar::ComponentMarginal;
use mixb2d::model::{
    self, avg_recon_error, expected_loglik, mstep, responsibilities, second_moments,
    update_latents, update_pi_means, InnerLoop, LatentEntry, LatentPosterior,
};
use mixb2d::persist::Container;
use mixb2d::rng::{self, Rng};
use mixb2d::{FitConfig, Matrix, MixtureParams};
use nalgebra::DMatrix;
use rand::Rng as _;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn column_stack(m: &Matrix) -> Vec<f64> {
    (0..m.cols())
        .flat_map(|j| (0..m.rows()).map(move |i| m[(i, j)]))
        .collect()
}

fn log_uniform(g: &mut Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(g.random_range(lo.log10()..hi.log10()))
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist1k")
}

fn mnist() -> Result<SampleSet, String> {
    let dir = mnist_dir();
    load_idx(
        &dir.join("images-idx3-ubyte"),
        Some(&dir.join("labels-idx1-ubyte")),
    )
    .map_err(|e| e.to_string())
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

/// Woodbury log-density against an explicit pq×pq Gaussian built with nalgebra.
fn marginal_likelihood_oracle() -> Outcome {
    let start = Instant::now();
    let mut g = rng::stream(1001, 0);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let p = g.random_range(1..=6);
        let q = g.random_range(1..=6);
        let r = g.random_range(1..=p.min(3));
        let c = g.random_range(1..=q.min(3));
        let s2 = log_uniform(&mut g, 1e-3, 10.0);
        let l = rng::standard_normal_matrix(&mut g, p, r);
        let rr = rng::standard_normal_matrix(&mut g, q, c);
        let m = rng::standard_normal_matrix(&mut g, p, q);
        let mut x = rng::standard_normal_matrix(&mut g, p, q).scale(2.0);
        x.add_scaled(1.0, &m);

        let fast = ComponentMarginal::new(&m, &l, &rr, s2)
            .and_then(|cm| cm.loglik(&x))
            .map_err(|e| format!("instance {i}: {e}"))?;

        let ul = to_na(&l) * to_na(&l).transpose();
        let vr = to_na(&rr) * to_na(&rr).transpose();
        let d = p * q;
        let cov = DMatrix::from_fn(d, d, |a, b| {
            let (ia, ja) = (a % p, a / p);
            let (ib, jb) = (b % p, b / p);
            vr[(ja, jb)] * ul[(ia, ib)] + if a == b { s2 } else { 0.0 }
        });
        let chol = cov
            .cholesky()
            .ok_or_else(|| format!("instance {i}: dense covariance not PD"))?;
        let resid: Vec<f64> = column_stack(&x)
            .iter()
            .zip(column_stack(&m))
            .map(|(a, b)| a - b)
            .collect();
        let e = nalgebra::DVector::from_vec(resid);
        let sol = chol.solve(&e);
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dense = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + e.dot(&sol));
        let diff = (fast - dense).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-8, || {
            format!("instance {i} (p={p} q={q} r={r} c={c} s2={s2:.3e}): |diff| = {diff:.3e}")
        })?;
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "50 instances, max |diff| {worst:.2e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

/// Eigen-based Stein solver against the dense Kronecker system.
fn stein_oracle() -> Outcome {
    let start = Instant::now();
    let mut g = rng::stream(1002, 0);
    let mut worst = 0.0f64;
    let mut worst_sol = 0.0f64;
    for i in 0..100 {
        let r = g.random_range(1..=5);
        let c = g.random_range(1..=5);
        let a = rng::standard_normal_matrix(&mut g, r, r);
        let b = rng::standard_normal_matrix(&mut g, c, c);
        let gl = a.t_matmul(&a);
        let gr = b.t_matmul(&b);
        let s2 = log_uniform(&mut g, 1e-3, 10.0);
        let y = rng::standard_normal_matrix(&mut g, r, c);
        let qm = stein_solve(&gl, &gr, s2, &y).map_err(|e| format!("instance {i}: {e}"))?;

        // vec(G_L Q G_R) = (G_Rᵀ ⊗ G_L) vec(Q)
        let kron =
            to_na(&gr).transpose().kronecker(&to_na(&gl)) + DMatrix::identity(r * c, r * c) * s2;
        let qv = nalgebra::DVector::from_vec(column_stack(&qm));
        let yv = nalgebra::DVector::from_vec(column_stack(&y));
        let rel = (&kron * &qv - &yv).norm() / yv.norm();
        worst = worst.max(rel);
        ensure(rel <= 1e-10, || {
            format!("instance {i}: relative residual {rel:.3e}")
        })?;
        let dense = kron
            .lu()
            .solve(&yv)
            .ok_or_else(|| format!("instance {i}: dense system singular"))?;
        worst_sol = worst_sol.max((&dense - &qv).norm() / dense.norm());
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "100 instances, max relative residual {worst:.2e}, max solution gap {worst_sol:.2e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn random_spd(g: &mut Rng, n: usize) -> Matrix {
    let a = rng::standard_normal_matrix(g, n, n);
    let mut m = a.t_matmul(&a).scale(1.0 / n as f64);
    m.add_diag(0.3);
    m.symmetrize();
    m
}

fn cholesky_lower(m: &Matrix) -> Matrix {
    let l = to_na(m).cholesky().expect("SPD").l();
    Matrix::from_fn(m.rows(), m.cols(), |i, j| l[(i, j)])
}

/// Closed-form second moments against Monte-Carlo averages over 10⁶ draws.
fn moment_identities() -> Outcome {
    let start = Instant::now();
    let mut g = rng::stream(1003, 0);
    let draws = 1_000_000;
    let mut worst = 0.0f64;
    for (inst, (r, c)) in [(1, 1), (2, 3), (3, 2), (3, 3)].into_iter().enumerate() {
        let (p, q) = (4, 5);
        let entry = LatentEntry {
            core: rng::standard_normal_matrix(&mut g, r, c),
            row_cov: random_spd(&mut g, r),
            col_cov: random_spd(&mut g, c),
        };
        let l = rng::standard_normal_matrix(&mut g, p, r);
        let rr = rng::standard_normal_matrix(&mut g, q, c);
        let gl = l.t_matmul(&l);
        let gr = rr.t_matmul(&rr);
        let at = cholesky_lower(&entry.row_cov);
        let cs = cholesky_lower(&entry.col_cov);

        let mut btb = Matrix::zeros(c, c);
        let mut btllb = Matrix::zeros(c, c);
        let mut brrbt = Matrix::zeros(r, r);
        for _ in 0..draws {
            let z = rng::standard_normal_matrix(&mut g, r, c);
            let mut b = at.matmul(&z).matmul_t(&cs);
            b.add_scaled(1.0, &entry.core);
            btb.add_scaled(1.0, &b.t_matmul(&b));
            btllb.add_scaled(1.0, &b.t_matmul(&gl.matmul(&b)));
            brrbt.add_scaled(1.0, &b.matmul(&gr).matmul_t(&b));
        }
        let n = draws as f64;
        let exact = second_moments(&entry, &l, &rr);
        for (name, mc, ex) in [
            ("<B'B>", btb.scale(1.0 / n), &exact.btb),
            ("<B'L'LB>", btllb.scale(1.0 / n), &exact.btllb),
            ("<BR'RB'>", brrbt.scale(1.0 / n), &exact.brrbt),
        ] {
            let rel = (&mc - ex).frobenius() / ex.frobenius();
            worst = worst.max(rel);
            ensure(rel <= 0.01, || {
                format!("instance {inst} (r={r} c={c}) {name}: relative error {rel:.4}")
            })?;
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "4 instances x 10^6 draws, max relative error {:.3}%, {:.1} s",
        worst * 100.0,
        start.elapsed().as_secs_f64()
    ))
}

/// Manual EM with the M-step isolated: the expected log-likelihood must not
/// drop across it and responsibilities must stay normalized. A component that
/// collapses onto a single sample has no finite maximizer; the run stops there
/// (the training loop would reinitialize it) and the collapse is reported.
fn em_sanity() -> Outcome {
    let mut worst_drop = 0.0f64;
    let mut worst_row = 0.0f64;
    let mut steps = 0;
    let mut collapsed = Vec::new();
    for inst in 0..20u64 {
        let spec = SyntheticSpec::separated(2, (6, 6, 2, 2), 3.0, 0.7, 0.2, 30, 2000 + inst);
        let (data, _) = synth_generate(&spec).map_err(|e| e.to_string())?;
        let mut params = model::init(&data, 2, 2, 2, inst).map_err(|e| e.to_string())?;
        let mut latent = LatentPosterior::prior(30, 2, 2, 2);
        for t in 0..10 {
            latent = update_latents(&data, &params, &latent, InnerLoop::default())
                .map_err(|e| format!("instance {inst} iteration {t}: {e}"))?;
            let gamma =
                responsibilities(&data, &params).map_err(|e| format!("instance {inst}: {e}"))?;
            for n in 0..30 {
                let dev = (gamma.row(n).iter().sum::<f64>() - 1.0).abs();
                worst_row = worst_row.max(dev);
                ensure(dev <= 1e-10, || {
                    format!("instance {inst} iteration {t} row {n}: sum off by {dev:.2e}")
                })?;
            }
            let wm = update_pi_means(&data, &gamma);
            ensure(wm.dead().is_empty(), || {
                format!("instance {inst}: dead component")
            })?;
            let comps = params
                .components()
                .iter()
                .enumerate()
                .map(|(k, comp)| {
                    let mut comp = comp.clone();
                    comp.weight = wm.weights[k];
                    comp.mean = wm.means[k].clone().expect("alive");
                    comp
                })
                .collect();
            let before_params =
                MixtureParams::new(params.dims(), comps).map_err(|e| e.to_string())?;
            let before = expected_loglik(&data, &gamma, &latent, &before_params);
            let after_params = match mstep(&data, &gamma, &latent, &before_params) {
                Ok(next) => next,
                Err(mixb2d::Error::SingularMoment { component, .. }) => {
                    collapsed.push(format!(
                        "{inst}@{t}(k={component}, mass {:.2})",
                        gamma.counts()[component]
                    ));
                    break;
                }
                Err(e) => return Err(format!("instance {inst} iteration {t}: {e}")),
            };
            let after = expected_loglik(&data, &gamma, &latent, &after_params);
            let drop = (before - after) / before.abs().max(1.0);
            worst_drop = worst_drop.max(drop);
            ensure(drop <= 1e-8, || {
                format!(
                    "instance {inst} iteration {t}: {before} -> {after} (relative drop {drop:.2e})"
                )
            })?;
            params = after_params;
            steps += 1;
        }
    }
    let collapses = if collapsed.is_empty() {
        String::new()
    } else {
        format!("; single-sample collapse stopped {}", collapsed.join(" "))
    };
    Ok(format!(
        "20 instances, {steps} M-steps, max relative drop {worst_drop:.1e}, max row-sum error {worst_row:.1e}{collapses}"
    ))
}

/// Well-separated two-component data: clustering and noise recovery.
fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let sigma2: f64 = 0.01;
    let separation = 10.0;
    let noise_std = sigma2.sqrt();
    let mut good = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let spec = SyntheticSpec::separated(2, (10, 10, 2, 2), separation, 0.5, sigma2, 200, seed);
        let (data, truth) = synth_generate(&spec).map_err(|e| e.to_string())?;
        let fit = model::fit(
            &data,
            &FitConfig {
                seed,
                ..FitConfig::new(2, 2, 2)
            },
        )
        .map_err(|e| e.to_string())?;
        let pred: Vec<usize> = (0..data.len()).map(|n| fit.gamma.argmax(n)).collect();
        let acc = clustering_accuracy(&pred, &truth, 2).map_err(|e| e.to_string())?;
        let agree = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let swapped = agree * 2 < data.len();
        let sig: Vec<f64> = (0..2)
            .map(|k| fit.params.component(if swapped { 1 - k } else { k }).sigma2)
            .collect();
        let sig_ok = sig.iter().all(|s| (s - sigma2).abs() <= 0.25 * sigma2);
        if acc >= 0.95 && sig_ok {
            good += 1;
        }
        notes.push(format!("{acc:.2}/{:.4},{:.4}", sig[0], sig[1]));
    }
    ensure(good >= 9, || {
        format!("only {good}/10 runs recovered: {}", notes.join(" "))
    })?;
    within(start.elapsed(), 120.0)?;
    Ok(format!(
        "{good}/10 runs with accuracy >= 0.95 and sigma2 within 25% (separation {:.0}x noise std), {:.1} s",
        separation / noise_std,
        start.elapsed().as_secs_f64()
    ))
}

/// GLRAM against truncated SVD for one sample, and objective monotonicity.
fn glram_cross_check() -> Outcome {
    let mut g = rng::stream(1006, 0);
    // centered single sample: the residual is the zero matrix, whose SVD error is 0
    let x = rng::standard_normal_matrix(&mut g, 5, 4);
    let one = SampleSet::new(vec![x], None).map_err(|e| e.to_string())?;
    let centered = glram_fit(&one, &GlramConfig::new(2, 2)).map_err(|e| e.to_string())?;
    let err0 =
        avg_recon_error(&one, &centered.model.reconstructions()).map_err(|e| e.to_string())?;
    ensure(err0 <= 1e-8, || format!("centered N=1 error {err0:.3e}"))?;

    let mut worst = 0.0f64;
    for i in 0..20 {
        let p = g.random_range(2..=8);
        let q = g.random_range(2..=8);
        let k = g.random_range(1..=p.min(q));
        let x = rng::standard_normal_matrix(&mut g, p, q);
        let set = SampleSet::new(vec![x.clone()], None).map_err(|e| e.to_string())?;
        let cfg = GlramConfig {
            center: false,
            max_iters: 1000,
            tol: 0.0,
            ..GlramConfig::new(k, k)
        };
        let fit = glram_fit(&set, &cfg).map_err(|e| e.to_string())?;
        let err = (&x - &fit.model.reconstructions()[0]).frobenius();
        let sv = to_na(&x).singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let tail = s[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (err - tail).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-8, || {
            format!("instance {i} (p={p} q={q} k={k}): {err} vs SVD {tail}")
        })?;
    }

    let mut half_steps = 0;
    for i in 0..10 {
        let samples = (0..10)
            .map(|_| rng::standard_normal_matrix(&mut g, 7, 6))
            .collect();
        let set = SampleSet::new(samples, None).map_err(|e| e.to_string())?;
        let fit = glram_fit(&set, &GlramConfig::new(3, 2)).map_err(|e| e.to_string())?;
        for (j, w) in fit.objective.windows(2).enumerate() {
            ensure(w[1] <= w[0] * (1.0 + 1e-12), || {
                format!("set {i} half-step {}: {} -> {}", j + 1, w[0], w[1])
            })?;
        }
        half_steps += fit.objective.len();
    }
    Ok(format!(
        "20 single-sample fits match truncated SVD (max |diff| {worst:.1e}); {half_steps} half-steps monotone on 10 random sets"
    ))
}

/// Full-protocol reconstruction run on the 1000-image MNIST subset.
fn mnist_trend() -> Outcome {
    let start = Instant::now();
    let data = mnist()?;
    ensure(data.len() == 1000 && data.dims() == (28, 28), || {
        format!("unexpected subset {} x {:?}", data.len(), data.dims())
    })?;
    let fit = model::fit(&data, &FitConfig::new(10, 4, 4)).map_err(|e| e.to_string())?;
    let mix = avg_recon_error(&data, &fit.reconstructions()).map_err(|e| e.to_string())?;
    let glram = glram_fit(&data, &GlramConfig::new(4, 4)).map_err(|e| e.to_string())?;
    let base = avg_recon_error(&data, &glram.model.reconstructions()).map_err(|e| e.to_string())?;
    ensure(mix < base, || {
        format!("(a) mixture error {mix} not below GLRAM {base}")
    })?;

    let e: Vec<f64> = fit.trace.iter().map(|s| s.recon_error).collect();
    ensure(e.len() <= 50, || format!("trace has {} rows", e.len()))?;
    for t in 2..e.len() {
        // e[t-1] is iteration t; compare iteration t+1 against t from t = 2 on
        ensure(e[t] <= e[t - 1] + 1e-6, || {
            format!(
                "(b) e rose at iteration {}: {} -> {}",
                t + 1,
                e[t - 1],
                e[t]
            )
        })?;
    }
    let dims = fit.params.dims();
    let ratio = (dims.p * dims.q) as f64 / (dims.r * dims.c) as f64;
    ensure(
        dims.p * dims.q == 784 && dims.r * dims.c == 16 && ratio == 49.0,
        || format!("(c) ratio {ratio}"),
    )?;
    within(start.elapsed(), 600.0)?;
    Ok(format!(
        "e = {mix:.4} vs GLRAM {base:.4}; {} iterations, e(t) from {:.4} to {:.4}, non-increasing after t=2; ratio 784/16 = {ratio}; {:.1} s",
        e.len(),
        e[0],
        e[e.len() - 1],
        start.elapsed().as_secs_f64()
    ))
}

/// Repeated 1-NN recognition on MNIST, 20 train / 10 test per class.
fn recognition_ordering() -> Outcome {
    let start = Instant::now();
    let data = mnist()?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for kind in [ModelKind::MixB2dPpca, ModelKind::MixPpca] {
        let cfg = RecognitionConfig {
            train_per_class: 20,
            test_per_class: Some(10),
            trials: 10,
            ..RecognitionConfig::new(kind, 4, 4, 4)
        };
        let res = run_recognition(&data, &cfg).map_err(|e| e.to_string())?;
        ensure(res.trials.len() == 10, || "expected 10 trials".into())?;
        rows.push(format!(
            "{:<11} K=4 r=c=4  {}",
            kind.name(),
            table_cell(&res)
        ));
        means.push(res.mean);
    }
    println!("      model       K   dim  accuracy (mean±std over 10 trials)");
    for row in &rows {
        println!("      {row}");
    }
    ensure(means[0] >= means[1] - 0.02, || {
        format!(
            "mixb2dppca {:.4} < mixppca {:.4} - 0.02",
            means[0], means[1]
        )
    })?;
    within(start.elapsed(), 900.0)?;
    Ok(format!(
        "mixb2dppca {:.4} >= mixppca {:.4} - 0.02; {:.1} s",
        means[0],
        means[1],
        start.elapsed().as_secs_f64()
    ))
}

fn train_trace(dir: &Path, threads: &str) -> Result<String, String> {
    let dataset = format!(
        "data=idx:{},{}",
        mnist_dir().join("images-idx3-ubyte").display(),
        mnist_dir().join("labels-idx1-ubyte").display()
    );
    let out = Command::new(env!("CARGO_BIN_EXE_mixb2dppca"))
        .current_dir(dir)
        .args([
            "--threads",
            threads,
            "train",
            &dataset,
            "K=10",
            "r=4",
            "c=4",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    fs::read_to_string(dir.join("trace.csv")).map_err(|e| e.to_string())
}

fn data_rows(trace: &str) -> Vec<Vec<f64>> {
    trace
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|f| f.parse().unwrap_or(f64::NAN))
                .collect()
        })
        .collect()
}

/// The CLI's training trace is reproducible, bit-exact with one thread.
fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = train_trace(dirs[0].path(), "1")?;
    let b = train_trace(dirs[1].path(), "1")?;
    ensure(a == b, || "sequential traces differ".into())?;
    let c = train_trace(dirs[2].path(), "4")?;
    let (ra, rc) = (data_rows(&a), data_rows(&c));
    ensure(ra.len() == rc.len(), || {
        "parallel trace length differs".into()
    })?;
    let mut worst = 0.0f64;
    for (x, y) in ra.iter().flatten().zip(rc.iter().flatten()) {
        if !(x.is_nan() && y.is_nan()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-9, || {
        format!("threads 1 vs 4 differ by {worst:.2e}")
    })?;
    Ok(format!(
        "{} trace rows identical across two sequential runs; threads=4 max |diff| {worst:.1e}",
        ra.len()
    ))
}

fn round_trip(
    name: &str,
    first: &Container,
    reload: impl Fn(&Container) -> Result<Container, String>,
) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.bin");
    first.save(&path).map_err(|e| e.to_string())?;
    let loaded = Container::load(&path).map_err(|e| e.to_string())?;
    let second = reload(&loaded)?;
    let path2 = dir.path().join("m2.bin");
    second.save(&path2).map_err(|e| e.to_string())?;
    let (b1, b2) = (fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    ensure(b1 == b2 && b1 == first.to_bytes(), || {
        format!("{name}: bytes differ after save/load/save")
    })
}

/// save → load → save is byte-identical for every model kind.
fn persistence() -> Outcome {
    let spec = SyntheticSpec::separated(2, (6, 5, 2, 2), 5.0, 0.5, 0.05, 60, 77);
    let (data, _) = synth_generate(&spec).map_err(|e| e.to_string())?;
    let meta = vec![("note".to_string(), "round trip".to_string())];

    let mix = model::fit(&data, &FitConfig::new(2, 2, 2)).map_err(|e| e.to_string())?;
    round_trip("mixb2dppca", &mix.params.to_container(&meta), |c| {
        Ok(MixtureParams::from_container(c)
            .map_err(|e| e.to_string())?
            .to_container(&c.meta))
    })?;
    let gl = glram_fit(&data, &GlramConfig::new(2, 3)).map_err(|e| e.to_string())?;
    round_trip("glram", &gl.model.to_container(&meta), |c| {
        Ok(GlramModel::from_container(c)
            .map_err(|e| e.to_string())?
            .to_container(&c.meta))
    })?;
    let pp = mixppca_fit(&data, &MixPpcaConfig::new(2, 3)).map_err(|e| e.to_string())?;
    round_trip("mixppca", &pp.model.to_container(&meta), |c| {
        Ok(MixPpcaModel::from_container(c)
            .map_err(|e| e.to_string())?
            .to_container(&c.meta))
    })?;
    Ok("mixb2dppca, glram and mixppca containers are byte-identical after save/load/save".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "marginal likelihood oracle", marginal_likelihood_oracle),
        (2, "Stein solver oracle", stein_oracle),
        (3, "second-moment identities", moment_identities),
        (4, "EM sanity", em_sanity),
        (5, "synthetic recovery", synthetic_recovery),
        (6, "GLRAM cross-check", glram_cross_check),
        (7, "MNIST reconstruction trend", mnist_trend),
        (8, "MNIST recognition ordering", recognition_ordering),
        (9, "determinism", determinism),
        (10, "persistence round trip", persistence),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
