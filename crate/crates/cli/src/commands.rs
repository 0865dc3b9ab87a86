use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mixb2d::baselines::{
    glram_fit, mixppca_fit, GlramConfig, GlramModel, MixPpcaConfig, MixPpcaModel, GLRAM_HEADER,
    MIXPPCA_HEADER,
};
use mixb2d::data::{DataError, SampleSet};
use mixb2d::eval::{
    run_recognition, synth_generate, table_cell, trial_csv_header, trial_rows, ModelKind,
    RecognitionConfig, RecognitionResult, SyntheticSpec,
};
use mixb2d::matvar::{dense_marginal_loglik, ComponentMarginal, DENSE_LIMIT};
use mixb2d::model::{self, avg_recon_error, IterationStats, LatentPosterior, MODEL_HEADER};
use mixb2d::persist::Container;
use mixb2d::{FitConfig, Matrix, MixtureParams};

use crate::config::RunConfig;
use crate::output::{join_f64, load_dataset, num, write_file, Csv};
use crate::CliError;

fn model_meta(cfg: &RunConfig, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut meta = vec![("command".to_string(), "train".to_string())];
    meta.extend(cfg.entries());
    meta.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    meta
}

fn save(container: Container, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    Ok(container.save(path)?)
}

fn write_mixture_trace(cfg: &RunConfig, trace: &[IterationStats]) -> Result<(), CliError> {
    let mut header = String::from("t,e_t,ell_t");
    for k in 1..=cfg.k {
        header.push_str(&format!(",N_{k}"));
    }
    header.push_str(",reinitialized,inner_unconverged");
    if cfg.record_wall_time {
        header.push_str(",wall_ms");
    }
    let mut csv = Csv::new(cfg, "train", &header);
    for s in trace {
        let reinit: Vec<String> = s
            .reinitialized
            .iter()
            .map(|k| (k + 1).to_string())
            .collect();
        let mut row = vec![
            s.iteration.to_string(),
            num(s.recon_error),
            num(s.expected_loglik),
            join_f64(&s.counts),
            reinit.join(";"),
            s.inner_unconverged.to_string(),
        ];
        if cfg.record_wall_time {
            row.push(format!("{:.3}", s.wall_ms));
        }
        csv.row(&row);
    }
    csv.save(&cfg.trace_file)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let (r, c) = (cfg.r, cfg.c);
    match cfg.model {
        ModelKind::MixB2dPpca => {
            let fit_cfg = FitConfig {
                max_iters: cfg.max_iters,
                epsilon: cfg.epsilon,
                seed: cfg.seed,
                threads: cfg.threads,
                recompute_report: cfg.report_recompute,
                fixed_noise: cfg.fixed_noise,
                ..FitConfig::new(cfg.k, r, c)
            };
            let mut partial = Vec::new();
            let result = model::fit_observed(&data, &fit_cfg, |s| partial.push(s.clone()));
            let fit = match result {
                Ok(fit) => fit,
                Err(e) => {
                    write_mixture_trace(cfg, &partial)?;
                    return Err(CliError::from(e).context(&format!(
                        "fit failed after {} iterations; partial trace in {}",
                        partial.len(),
                        cfg.trace_file.display()
                    )));
                }
            };
            write_mixture_trace(cfg, &fit.trace)?;
            let err = avg_recon_error(&data, &fit.reconstructions())?;
            let meta = model_meta(
                cfg,
                &[
                    ("iterations", fit.iterations().to_string()),
                    ("converged", fit.converged.to_string()),
                    ("recon_error", num(err)),
                ],
            );
            save(fit.params.to_container(&meta), &cfg.model_file)?;
            println!(
                "mixb2dppca K={} r={r} c={c}: {} iterations, converged={}, e={err}",
                cfg.k,
                fit.iterations(),
                fit.converged
            );
        }
        ModelKind::Glram => {
            let glram_cfg = GlramConfig {
                max_iters: cfg.max_iters,
                center: !cfg.no_center,
                ..GlramConfig::new(r, c)
            };
            let fit = glram_fit(&data, &glram_cfg)?;
            let n = data.len() as f64;
            let mut csv = Csv::new(cfg, "train", "step,objective,e_t");
            for (i, obj) in fit.objective.iter().enumerate() {
                csv.row(&[(i + 1).to_string(), num(*obj), num((obj / n).sqrt())]);
            }
            csv.save(&cfg.trace_file)?;
            let err = avg_recon_error(&data, &fit.model.reconstructions())?;
            let meta = model_meta(cfg, &[("recon_error", num(err))]);
            save(fit.model.to_container(&meta), &cfg.model_file)?;
            println!(
                "glram r={r} c={c}: {} half-steps, e={err}",
                fit.objective.len()
            );
        }
        ModelKind::MixPpca => {
            let d = cfg.latent_dim(r, c);
            let ppca_cfg = MixPpcaConfig {
                max_iters: cfg.max_iters,
                seed: cfg.seed,
                threads: cfg.threads,
                fixed_noise: cfg.fixed_noise,
                ..MixPpcaConfig::new(cfg.k, d)
            };
            let fit = mixppca_fit(&data, &ppca_cfg)?;
            let mut csv = Csv::new(cfg, "train", "t,loglik");
            for (i, ll) in fit.loglik.iter().enumerate() {
                csv.row(&[i.to_string(), num(*ll)]);
            }
            csv.save(&cfg.trace_file)?;
            let recons = data
                .samples()
                .iter()
                .map(|x| fit.model.reconstruct(x))
                .collect::<mixb2d::Result<Vec<_>>>()?;
            let err = avg_recon_error(&data, &recons)?;
            let meta = model_meta(
                cfg,
                &[
                    ("iterations", fit.iterations().to_string()),
                    ("recon_error", num(err)),
                ],
            );
            save(fit.model.to_container(&meta), &cfg.model_file)?;
            println!(
                "mixppca K={} d={d}: {} iterations, e={err}",
                cfg.k,
                fit.iterations()
            );
        }
    }
    Ok(())
}

enum Loaded {
    Mixture(MixtureParams),
    Glram(GlramModel),
    MixPpca(MixPpcaModel),
}

fn load_model(path: &Path) -> Result<Loaded, CliError> {
    let container = Container::load(path)?;
    let loaded = match container.header.as_str() {
        MODEL_HEADER => Loaded::Mixture(MixtureParams::from_container(&container)?),
        GLRAM_HEADER => Loaded::Glram(GlramModel::from_container(&container)?),
        MIXPPCA_HEADER => Loaded::MixPpca(MixPpcaModel::from_container(&container)?),
        other => {
            return Err(CliError::Data(format!(
                "{}: unrecognized model header {other:?}",
                path.display()
            )))
        }
    };
    Ok(loaded)
}

fn check_dims(data: &SampleSet, expected: (usize, usize)) -> Result<(), CliError> {
    if data.dims() != expected {
        return Err(CliError::Data(format!(
            "dataset samples are {:?} but the model expects {expected:?}",
            data.dims()
        )));
    }
    Ok(())
}

/// Per-sample reduced representation: one `(component, γ, features)` per component.
type Reduced = Vec<(usize, f64, Matrix)>;

fn apply_model(
    cfg: &RunConfig,
    data: &SampleSet,
) -> Result<Vec<(Matrix, usize, Reduced)>, CliError> {
    match load_model(&cfg.model_file)? {
        Loaded::Mixture(params) => {
            let dims = params.dims();
            check_dims(data, (dims.p, dims.q))?;
            let projections =
                model::with_threads(cfg.threads, || model::project_all(data, &params))?;
            Ok(projections
                .into_iter()
                .map(|proj| {
                    let recon = proj.reconstruct(&params);
                    let reduced = proj
                        .cores
                        .into_iter()
                        .zip(&proj.gamma)
                        .enumerate()
                        .map(|(k, (core, &g))| (k, g, core))
                        .collect();
                    (recon, proj.assigned, reduced)
                })
                .collect())
        }
        Loaded::Glram(m) => {
            check_dims(data, m.mean.shape())?;
            Ok(data
                .samples()
                .iter()
                .map(|x| {
                    let core = m.project(x);
                    (m.reconstruct(&core), 0, vec![(0, 1.0, core)])
                })
                .collect())
        }
        Loaded::MixPpca(m) => {
            check_dims(data, m.shape)?;
            data.samples()
                .iter()
                .map(|x| {
                    let gamma = m.responsibilities(x)?;
                    let feats = m.features(x)?;
                    let assigned = model::argmax(&gamma);
                    let reduced = feats
                        .into_iter()
                        .zip(&gamma)
                        .enumerate()
                        .map(|(k, (f, &g))| (k, g, f))
                        .collect();
                    Ok((m.reconstruct(x)?, assigned, reduced))
                })
                .collect::<mixb2d::Result<Vec<_>>>()
                .map_err(CliError::from)
        }
    }
}

fn label_field(data: &SampleSet, n: usize) -> String {
    data.labels().map_or_else(String::new, |l| l[n].to_string())
}

pub fn reconstruct(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let applied = apply_model(cfg, &data)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.out_dir.display())))?;
    let comments = cfg.echo_lines("reconstruct");
    let mut csv = Csv::new(cfg, "reconstruct", "sample,label,assigned,error,file");
    let mut total = 0.0;
    for (n, (recon, assigned, _)) in applied.iter().enumerate() {
        let err = (data.sample(n) - recon).frobenius();
        total += err * err;
        let name = format!("recon_{n:05}.pgm");
        mixb2d::data::save_pgm_annotated(&cfg.out_dir.join(&name), recon, &comments)?;
        csv.row(&[
            n.to_string(),
            label_field(&data, n),
            assigned.to_string(),
            num(err),
            name,
        ]);
    }
    csv.save(&cfg.report_file)?;
    println!(
        "reconstructed {} samples into {}, e={}",
        data.len(),
        cfg.out_dir.display(),
        (total / data.len() as f64).sqrt()
    );
    Ok(())
}

pub fn project(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let applied = apply_model(cfg, &data)?;
    let width = applied
        .first()
        .and_then(|(_, _, red)| red.first())
        .map_or(0, |(_, _, f)| f.rows() * f.cols());
    let mut header = String::from("sample,label,assigned,component,gamma");
    for i in 0..width {
        header.push_str(&format!(",f_{i}"));
    }
    let mut csv = Csv::new(cfg, "project", &header);
    for (n, (_, assigned, reduced)) in applied.iter().enumerate() {
        for (k, g, feats) in reduced {
            csv.row(&[
                n.to_string(),
                label_field(&data, n),
                assigned.to_string(),
                k.to_string(),
                num(*g),
                join_f64(feats.as_slice()),
            ]);
        }
    }
    csv.save(&cfg.features_file)?;
    println!(
        "projected {} samples into {}",
        data.len(),
        cfg.features_file.display()
    );
    Ok(())
}

struct Cell {
    kind: ModelKind,
    k: usize,
    r: usize,
    c: usize,
}

fn grid(cfg: &RunConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for kind in cfg.models() {
        // GLRAM has no mixture size; it gets one cell per latent size
        let ks = if kind == ModelKind::Glram {
            vec![1]
        } else {
            cfg.k_values()
        };
        for &k in &ks {
            for (r, c) in cfg.rank_pairs() {
                cells.push(Cell { kind, k, r, c });
            }
        }
    }
    cells
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    if data.labels().is_none() {
        return Err(DataError::MissingLabels.into());
    }
    let mut results: Vec<RecognitionResult> = Vec::new();
    for cell in grid(cfg) {
        let rc = RecognitionConfig {
            latent_dim: cfg.d,
            trials: cfg.trials,
            seed_base: cfg.seed,
            split_mode: cfg.split,
            train_per_class: cfg.train_per_class,
            test_per_class: cfg.test_per_class,
            max_iters: cfg.max_iters,
            epsilon: cfg.epsilon,
            weighted_distance: cfg.weighted_distance,
            center: !cfg.no_center,
            threads: cfg.threads,
            ..RecognitionConfig::new(cell.kind, cell.k, cell.r, cell.c)
        };
        let res = run_recognition(&data, &rc).map_err(|e| {
            CliError::from(e).context(&format!(
                "cell model={} K={} r={} c={}",
                cell.kind, cell.k, cell.r, cell.c
            ))
        })?;
        println!(
            "{:<11} K={:<3} r={:<3} c={:<3} {}",
            res.model.name(),
            res.components,
            res.r,
            res.c,
            table_cell(&res)
        );
        results.push(res);
    }

    let mut metrics = Csv::new(cfg, "evaluate", &trial_csv_header(cfg.record_wall_time));
    let mut summary = Csv::new(cfg, "evaluate", "model,K,r,c,d,trials,mean,std,cell");
    for res in &results {
        metrics.raw(&trial_rows(res, cfg.record_wall_time));
        summary.row(&[
            res.model.to_string(),
            res.components.to_string(),
            res.r.to_string(),
            res.c.to_string(),
            res.d.to_string(),
            res.trials.len().to_string(),
            num(res.mean),
            num(res.std),
            table_cell(res),
        ]);
    }
    metrics.save(&cfg.metrics_file)?;
    summary.save(&cfg.summary_file)?;

    let mut results_json = serde_json::to_value(&results)
        .map_err(|e| CliError::Data(format!("serializing results: {e}")))?;
    if !cfg.record_wall_time {
        if let Some(cells) = results_json.as_array_mut() {
            for trial in cells
                .iter_mut()
                .filter_map(|c| c["trials"].as_array_mut())
                .flatten()
            {
                if let Some(obj) = trial.as_object_mut() {
                    obj.remove("wall_ms");
                }
            }
        }
    }
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .entries()
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let doc =
        serde_json::json!({ "command": "evaluate", "config": config, "results": results_json });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Data(format!("serializing results: {e}")))?;
    write_file(&cfg.results_file, format!("{text}\n").as_bytes())
}

/// Best-of-`repeats` wall time in milliseconds, with the last result.
fn time_best<T>(
    repeats: usize,
    mut f: impl FnMut() -> mixb2d::Result<T>,
) -> Result<(f64, T), CliError> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = f()?;
        best = best.min(start.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((best, last.expect("at least one repeat")))
}

pub fn benchmark(cfg: &RunConfig) -> Result<(), CliError> {
    let mut csv = Csv::new(
        cfg,
        "benchmark",
        "p,q,pq,N,K,r,c,phase,repeats,best_ms,loglik,max_abs_diff",
    );
    for &size in &cfg.bench_sizes {
        let (r, c) = (cfg.r.min(size), cfg.c.min(size));
        let (n, k) = (cfg.bench_samples, cfg.k);
        let spec = SyntheticSpec::separated(k, (size, size, r, c), 10.0, 1.0, 0.01, n, cfg.seed);
        let (data, _) = synth_generate(&spec)?;
        let params = model::init(&data, k, r, c, cfg.seed)?;
        let prior = LatentPosterior::prior(n, k, r, c);
        let reps = cfg.bench_repeats;

        let rows = model::with_threads(
            cfg.threads,
            || -> Result<Vec<(String, f64, String, String)>, CliError> {
                let mut rows = Vec::new();
                let (ms, latent) = time_best(reps, || {
                    model::update_latents(&data, &params, &prior, model::InnerLoop::default())
                })?;
                rows.push(("latent_updates".into(), ms, String::new(), String::new()));
                let (ms, gamma) = time_best(reps, || model::responsibilities(&data, &params))?;
                rows.push(("responsibilities".into(), ms, String::new(), String::new()));
                let (ms, _) = time_best(reps, || model::mstep(&data, &gamma, &latent, &params))?;
                rows.push(("mstep".into(), ms, String::new(), String::new()));

                let (ms, woodbury) = time_best(reps, || {
                    let margs = params
                        .components()
                        .iter()
                        .map(|comp| {
                            ComponentMarginal::new(&comp.mean, &comp.left, &comp.right, comp.sigma2)
                        })
                        .collect::<mixb2d::Result<Vec<_>>>()?;
                    data.samples()
                        .iter()
                        .flat_map(|x| margs.iter().map(move |m| m.loglik(x)))
                        .collect::<mixb2d::Result<Vec<f64>>>()
                })?;
                let total: f64 = woodbury.iter().sum();
                rows.push(("loglik_woodbury".into(), ms, num(total), String::new()));
                if size * size <= DENSE_LIMIT {
                    let (ms, dense) = time_best(reps, || {
                        data.samples()
                            .iter()
                            .flat_map(|x| {
                                params.components().iter().map(move |comp| {
                                    dense_marginal_loglik(
                                        x,
                                        &comp.mean,
                                        &comp.left,
                                        &comp.right,
                                        comp.sigma2,
                                    )
                                })
                            })
                            .collect::<mixb2d::Result<Vec<f64>>>()
                    })?;
                    let diff = woodbury
                        .iter()
                        .zip(&dense)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    let total: f64 = dense.iter().sum();
                    rows.push(("loglik_dense".into(), ms, num(total), num(diff)));
                }
                Ok(rows)
            },
        )?;

        for (phase, ms, ll, diff) in rows {
            println!("p=q={size:<4} {phase:<17} {ms:>10.3} ms");
            csv.row(&[
                size.to_string(),
                size.to_string(),
                (size * size).to_string(),
                n.to_string(),
                k.to_string(),
                r.to_string(),
                c.to_string(),
                phase,
                reps.to_string(),
                format!("{ms:.3}"),
                ll,
                diff,
            ]);
        }
    }
    csv.save(&cfg.bench_file)
}

pub fn inspect(path: &Path) -> Result<(), CliError> {
    let container = Container::load(path)?;
    let mut out = format!("header: {}\n", container.header);
    for (k, v) in &container.meta {
        out.push_str(&format!("meta {k}={v}\n"));
    }
    for (k, v) in &container.dims {
        out.push_str(&format!("dim {k}={v}\n"));
    }
    for a in &container.arrays {
        out.push_str(&format!("array {} {}x{}\n", a.name, a.rows, a.cols));
    }
    // a closed pipe (e.g. `| head`) is not an error
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    Ok(())
}
