//! Experiment harness: feature distances, 1-NN recognition over repeated
//! random splits, clustering scores and a forward sampler for the model.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;

use crate::baselines::{glram_fit, mixppca_fit, GlramConfig, MixPpcaConfig};
use crate::data::{split, SampleSet, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{self, avg_recon_error, Component, FitConfig};
use crate::rng;

/// Features of one sample: one core per component plus the component posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub cores: Vec<Matrix>,
    pub gamma: Vec<f64>,
}

impl Features {
    pub fn unweighted(cores: Vec<Matrix>) -> Self {
        let k = cores.len();
        Self {
            cores,
            gamma: vec![1.0; k],
        }
    }
}

/// `Σ_k ‖a_k − b_k‖_F`.
pub fn feature_distance(a: &[Matrix], b: &[Matrix]) -> Result<f64> {
    weighted_sum(a, b, |_| 1.0)
}

/// `Σ_k γ_ak γ_bk ‖a_k − b_k‖_F`.
pub fn feature_distance_weighted(a: &Features, b: &Features) -> Result<f64> {
    if a.gamma.len() != a.cores.len() || b.gamma.len() != b.cores.len() {
        return Err(Error::InvalidConfig(
            "one posterior weight per core required".into(),
        ));
    }
    weighted_sum(&a.cores, &b.cores, |k| a.gamma[k] * b.gamma[k])
}

fn weighted_sum(a: &[Matrix], b: &[Matrix], w: impl Fn(usize) -> f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: (a.len(), 1),
            actual: (b.len(), 1),
        });
    }
    let mut total = 0.0;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                expected: x.shape(),
                actual: y.shape(),
            });
        }
        total += w(k) * (x - y).frobenius();
    }
    Ok(total)
}

/// Label of the nearest training item; ties go to the lowest index.
pub fn one_nn_classify(
    train: &[Features],
    labels: &[u32],
    query: &Features,
    weighted: bool,
) -> Result<u32> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if labels.len() != train.len() {
        return Err(Error::ShapeMismatch {
            expected: (train.len(), 1),
            actual: (labels.len(), 1),
        });
    }
    let mut best = (f64::INFINITY, 0);
    for (i, t) in train.iter().enumerate() {
        let d = if weighted {
            feature_distance_weighted(t, query)?
        } else {
            feature_distance(&t.cores, &query.cores)?
        };
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(labels[best.1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ModelKind {
    #[serde(rename = "mixb2dppca")]
    MixB2dPpca,
    #[serde(rename = "glram")]
    Glram,
    #[serde(rename = "mixppca")]
    MixPpca,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::MixB2dPpca, ModelKind::Glram, ModelKind::MixPpca];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MixB2dPpca => "mixb2dppca",
            ModelKind::Glram => "glram",
            ModelKind::MixPpca => "mixppca",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionConfig {
    pub kind: ModelKind,
    pub components: usize,
    pub rank_rows: usize,
    pub rank_cols: usize,
    /// Latent size for the vectorial mixture; defaults to `r·c`.
    pub latent_dim: Option<usize>,
    pub trials: usize,
    /// Trial `i` uses seed `seed_base + i` for both split and fit.
    pub seed_base: u64,
    pub split_mode: SplitMode,
    pub train_per_class: usize,
    pub test_per_class: Option<usize>,
    pub max_iters: usize,
    pub epsilon: f64,
    pub weighted_distance: bool,
    pub center: bool,
    pub threads: usize,
}

impl RecognitionConfig {
    pub fn new(kind: ModelKind, components: usize, rank_rows: usize, rank_cols: usize) -> Self {
        Self {
            kind,
            components,
            rank_rows,
            rank_cols,
            latent_dim: None,
            trials: 10,
            seed_base: 0,
            split_mode: SplitMode::PerClassCount,
            train_per_class: 6,
            test_per_class: None,
            max_iters: 50,
            epsilon: 1e-3,
            weighted_distance: false,
            center: true,
            threads: 1,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim.unwrap_or(self.rank_rows * self.rank_cols)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Average reconstruction error on the training split.
    pub recon_error: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecognitionResult {
    pub model: ModelKind,
    #[serde(rename = "K")]
    pub components: usize,
    pub r: usize,
    pub c: usize,
    pub d: usize,
    pub weighted_distance: bool,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialResult>,
    pub mean: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std: f64,
}

/// Mean and sample standard deviation; a single value has zero spread.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Trained {
    train: Vec<Features>,
    test: Vec<Features>,
    recon_error: f64,
    iterations: usize,
}

fn train_and_extract(
    train: &SampleSet,
    test: &SampleSet,
    config: &RecognitionConfig,
    seed: u64,
) -> Result<Trained> {
    match config.kind {
        ModelKind::MixB2dPpca => {
            let fit_cfg = FitConfig {
                max_iters: config.max_iters,
                epsilon: config.epsilon,
                seed,
                threads: config.threads,
                ..FitConfig::new(config.components, config.rank_rows, config.rank_cols)
            };
            let fit = model::fit(train, &fit_cfg)?;
            let recon_error = avg_recon_error(train, &fit.reconstructions())?;
            let train_feats = (0..train.len())
                .map(|n| Features {
                    cores: fit.latent.cores(n),
                    gamma: fit.gamma.row(n).to_vec(),
                })
                .collect();
            let test_feats =
                model::with_threads(config.threads, || model::project_all(test, &fit.params))?
                    .into_iter()
                    .map(|p| Features {
                        cores: p.cores,
                        gamma: p.gamma,
                    })
                    .collect();
            Ok(Trained {
                train: train_feats,
                test: test_feats,
                recon_error,
                iterations: fit.iterations(),
            })
        }
        ModelKind::Glram => {
            let cfg = GlramConfig {
                max_iters: config.max_iters,
                center: config.center,
                ..GlramConfig::new(config.rank_rows, config.rank_cols)
            };
            let fit = glram_fit(train, &cfg)?;
            let m = &fit.model;
            let recon_error = avg_recon_error(train, &m.reconstructions())?;
            Ok(Trained {
                train: m
                    .cores
                    .iter()
                    .map(|c| Features::unweighted(vec![c.clone()]))
                    .collect(),
                test: test
                    .samples()
                    .iter()
                    .map(|x| Features::unweighted(vec![m.project(x)]))
                    .collect(),
                recon_error,
                iterations: fit.objective.len() / 2,
            })
        }
        ModelKind::MixPpca => {
            let cfg = MixPpcaConfig {
                max_iters: config.max_iters,
                seed,
                threads: config.threads,
                ..MixPpcaConfig::new(config.components, config.latent_dim())
            };
            let fit = mixppca_fit(train, &cfg)?;
            let m = &fit.model;
            let extract = |x: &Matrix| -> Result<Features> {
                Ok(Features {
                    cores: m.features(x)?,
                    gamma: m.responsibilities(x)?,
                })
            };
            let recons = train
                .samples()
                .iter()
                .map(|x| m.reconstruct(x))
                .collect::<Result<Vec<_>>>()?;
            Ok(Trained {
                train: train.samples().iter().map(extract).collect::<Result<_>>()?,
                test: test.samples().iter().map(extract).collect::<Result<_>>()?,
                recon_error: avg_recon_error(train, &recons)?,
                iterations: fit.iterations(),
            })
        }
    }
}

fn run_trial(data: &SampleSet, config: &RecognitionConfig, trial: usize) -> Result<TrialResult> {
    let start = Instant::now();
    let seed = config.seed_base + trial as u64;
    let spec = SplitSpec {
        mode: config.split_mode,
        train_per_class: config.train_per_class,
        test_per_class: config.test_per_class,
        seed,
    };
    let (train, test) = split(data, &spec)?;
    let trained = train_and_extract(&train, &test, config, seed)?;
    let train_labels = train
        .labels()
        .ok_or(crate::data::DataError::MissingLabels)?;
    let test_labels = test.labels().ok_or(crate::data::DataError::MissingLabels)?;
    let mut correct = 0usize;
    for (q, &truth) in trained.test.iter().zip(test_labels) {
        let predicted = one_nn_classify(&trained.train, train_labels, q, config.weighted_distance)?;
        correct += usize::from(predicted == truth);
    }
    Ok(TrialResult {
        trial,
        seed,
        accuracy: correct as f64 / test.len().max(1) as f64,
        recon_error: trained.recon_error,
        iterations: trained.iterations,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        train_size: train.len(),
        test_size: test.len(),
    })
}

/// Repeats split → fit → 1-NN for `config.trials` seeded trials.
pub fn run_recognition(data: &SampleSet, config: &RecognitionConfig) -> Result<RecognitionResult> {
    if config.trials == 0 {
        return Err(Error::InvalidConfig(
            "at least one trial is required".into(),
        ));
    }
    let trials = (0..config.trials)
        .map(|i| {
            run_trial(data, config, i).map_err(|e| Error::Trial {
                trial: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = trials.iter().map(|t| t.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(RecognitionResult {
        model: config.kind,
        components: config.components,
        r: config.rank_rows,
        c: config.rank_cols,
        d: config.latent_dim(),
        weighted_distance: config.weighted_distance,
        seeds: trials.iter().map(|t| t.seed).collect(),
        trials,
        mean,
        std,
    })
}

/// Header for [`trial_rows`]; the wall-time column is optional because it
/// is the only field that varies between identical runs.
pub fn trial_csv_header(with_wall_time: bool) -> String {
    let mut h = String::from("trial,seed,model,K,r,c,d,accuracy,recon_error,iterations");
    if with_wall_time {
        h.push_str(",wall_time_ms");
    }
    h
}

/// One CSV row per trial, LF line endings, no header.
pub fn trial_rows(result: &RecognitionResult, with_wall_time: bool) -> String {
    let mut out = String::new();
    for t in &result.trials {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            t.trial,
            t.seed,
            result.model,
            result.components,
            result.r,
            result.c,
            result.d,
            t.accuracy,
            t.recon_error,
            t.iterations,
        ));
        if with_wall_time {
            out.push_str(&format!(",{:.3}", t.wall_ms));
        }
        out.push('\n');
    }
    out
}

/// `mean±std` in the layout of a results table cell.
pub fn table_cell(result: &RecognitionResult) -> String {
    format!("{:.4}±{:.4}", result.mean, result.std)
}

/// Ground-truth parameters for [`synth_generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub components: Vec<Component>,
    pub samples: usize,
    pub seed: u64,
    /// Multiplies every latent core; 0 draws `B = 0`.
    pub latent_scale: f64,
}

impl SyntheticSpec {
    /// `K` components with means spaced `separation` apart along a random
    /// unit direction, loadings of entry size `loading_scale`, noise `sigma2`.
    #[allow(clippy::too_many_arguments)]
    pub fn separated(
        k: usize,
        (p, q, r, c): (usize, usize, usize, usize),
        separation: f64,
        loading_scale: f64,
        sigma2: f64,
        samples: usize,
        seed: u64,
    ) -> Self {
        let mut g = rng::stream(seed, 3);
        let dir = rng::standard_normal_matrix(&mut g, p, q);
        let dir = dir.scale(1.0 / dir.frobenius());
        let components = (0..k)
            .map(|i| Component {
                weight: 1.0 / k as f64,
                mean: dir.scale(separation * i as f64),
                left: rng::standard_normal_matrix(&mut g, p, r).scale(loading_scale),
                right: rng::standard_normal_matrix(&mut g, q, c).scale(loading_scale),
                sigma2,
            })
            .collect();
        Self {
            components,
            samples,
            seed,
            latent_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .components
            .first()
            .ok_or_else(|| Error::InvalidConfig("synthetic spec needs a component".into()))?;
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 || self.components.iter().any(|c| !(c.weight >= 0.0)) {
            return Err(Error::InvalidConfig(
                "synthetic weights must sum to 1".into(),
            ));
        }
        for comp in &self.components {
            if comp.mean.shape() != first.mean.shape()
                || comp.left.shape() != first.left.shape()
                || comp.right.shape() != first.right.shape()
                || comp.left.rows() != comp.mean.rows()
                || comp.right.rows() != comp.mean.cols()
            {
                return Err(Error::ShapeMismatch {
                    expected: first.mean.shape(),
                    actual: comp.mean.shape(),
                });
            }
            if !(comp.sigma2 >= 0.0) {
                return Err(Error::InvalidConfig(
                    "synthetic noise must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Samples `z ~ π`, `B ~ N(0, I, I)`, `X = L_z B R_zᵀ + M_z + E`.
/// Returns the set (labelled with `z`) and the assignments.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<(SampleSet, Vec<usize>)> {
    spec.validate()?;
    let mut g = rng::stream(spec.seed, 2);
    let (p, q) = spec.components[0].mean.shape();
    let (r, c) = (
        spec.components[0].left.cols(),
        spec.components[0].right.cols(),
    );
    let mut samples = Vec::with_capacity(spec.samples);
    let mut truth = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let u: f64 = g.random();
        let mut acc = 0.0;
        let mut z = spec.components.len() - 1;
        for (k, comp) in spec.components.iter().enumerate() {
            acc += comp.weight;
            if u < acc {
                z = k;
                break;
            }
        }
        let comp = &spec.components[z];
        let b = rng::standard_normal_matrix(&mut g, r, c).scale(spec.latent_scale);
        let noise = rng::standard_normal_matrix(&mut g, p, q).scale(comp.sigma2.sqrt());
        let mut x = comp.reconstruct(&b);
        x.add_scaled(1.0, &noise);
        samples.push(x);
        truth.push(z);
    }
    let labels = truth.iter().map(|&z| z as u32).collect();
    let set = SampleSet::new(samples, Some(labels))?.with_provenance(format!(
        "synthetic: K={} N={} seed={}",
        spec.components.len(),
        spec.samples,
        spec.seed
    ));
    Ok((set, truth))
}

/// Best accuracy over all one-to-one relabelings of `predicted`.
pub fn clustering_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: (truth.len(), 1),
            actual: (predicted.len(), 1),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&l| l >= k) {
        return Err(Error::InvalidConfig(format!(
            "label {bad} out of range for K = {k}"
        )));
    }
    let mut counts = vec![vec![0i64; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let matched = if k <= 8 {
        best_permutation(&counts)
    } else {
        hungarian_max(&counts)
    };
    Ok(matched as f64 / predicted.len() as f64)
}

fn best_permutation(counts: &[Vec<i64>]) -> i64 {
    fn go(row: usize, used: &mut Vec<bool>, counts: &[Vec<i64>]) -> i64 {
        if row == counts.len() {
            return 0;
        }
        let mut best = i64::MIN;
        for j in 0..counts.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(counts[row][j] + go(row + 1, used, counts));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; counts.len()], counts)
}

/// Maximum-weight perfect matching on a square count matrix (Kuhn–Munkres,
/// potentials form, O(K³)).
fn hungarian_max(counts: &[Vec<i64>]) -> i64 {
    let n = counts.len();
    let big = counts.iter().flatten().copied().max().unwrap_or(0);
    // minimize cost = big − count; 1-based arrays as in the classic formulation
    let cost = |i: usize, j: usize| big - counts[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| counts[p[j] - 1][j - 1]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, vec as vecm};
    use crate::testutil::{random_matrix, rng as trng};
    use proptest::prelude::*;

    fn cores(seed: u64, k: usize) -> Vec<Matrix> {
        let mut r = trng(seed);
        (0..k).map(|_| random_matrix(&mut r, 2, 3)).collect()
    }

    #[test]
    fn distance_examples() {
        let a = cores(1, 2);
        assert_eq!(feature_distance(&a, &a).unwrap(), 0.0);
        let b = vec![
            &a[0] + &Matrix::from_rows(&[&[3.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]),
            &a[1] + &Matrix::from_rows(&[&[0.0, 0.0, 0.0], &[0.0, 4.0, 0.0]]),
        ];
        assert!((feature_distance(&a, &b).unwrap() - 7.0).abs() < 1e-12);
        let c = cores(2, 2);
        assert_eq!(
            feature_distance(&a, &c).unwrap(),
            feature_distance(&c, &a).unwrap()
        );
        assert!(feature_distance(&a, &c[..1]).is_err());
        let fa = Features {
            cores: a.clone(),
            gamma: vec![0.5, 0.5],
        };
        let fb = Features {
            cores: b,
            gamma: vec![1.0, 0.0],
        };
        assert!((feature_distance_weighted(&fa, &fb).unwrap() - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn distance_is_pseudometric(s in 0u64..1_000_000) {
            let (a, b, c) = (cores(s, 3), cores(s + 1, 3), cores(s + 2, 3));
            let ab = feature_distance(&a, &b).unwrap();
            let bc = feature_distance(&b, &c).unwrap();
            let ac = feature_distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, feature_distance(&b, &a).unwrap());
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn clustering_accuracy_ignores_relabeling(
            truth in proptest::collection::vec(0usize..4, 1..40),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
            noise in proptest::collection::vec(0usize..4, 40),
        ) {
            let pred: Vec<usize> = truth.iter().zip(&noise).map(|(&t, &n)| if n == 0 { (t + 1) % 4 } else { t }).collect();
            let relabeled: Vec<usize> = pred.iter().map(|&l| perm[l]).collect();
            let a = clustering_accuracy(&pred, &truth, 4).unwrap();
            let b = clustering_accuracy(&relabeled, &truth, 4).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!((hungarian_max(&count_matrix(&pred, &truth, 4)) - best_permutation(&count_matrix(&pred, &truth, 4))) == 0);
        }
    }

    fn count_matrix(pred: &[usize], truth: &[usize], k: usize) -> Vec<Vec<i64>> {
        let mut c = vec![vec![0; k]; k];
        for (&p, &t) in pred.iter().zip(truth) {
            c[p][t] += 1;
        }
        c
    }

    #[test]
    fn one_nn_examples() {
        let train: Vec<Features> = (0..20).map(|s| Features::unweighted(cores(s, 2))).collect();
        let labels: Vec<u32> = (0..20).map(|i| i % 3).collect();
        assert_eq!(
            one_nn_classify(&train, &labels, &train[7], false).unwrap(),
            labels[7]
        );

        let near = Features::unweighted(vec![Matrix::zeros(1, 1)]);
        let pair = [
            Features::unweighted(vec![Matrix::from_rows(&[&[2.0]])]),
            Features::unweighted(vec![Matrix::from_rows(&[&[1.0]])]),
        ];
        assert_eq!(one_nn_classify(&pair, &[5, 9], &near, false).unwrap(), 9);
        let tied = [pair[1].clone(), pair[1].clone()];
        assert_eq!(one_nn_classify(&tied, &[4, 8], &near, false).unwrap(), 4);
        assert!(one_nn_classify(&[], &[], &near, false).is_err());

        let mut r = trng(9);
        for _ in 0..10 {
            let q = Features::unweighted(cores(r.random_range(100..200), 2));
            let dists: Vec<f64> = train
                .iter()
                .map(|t| feature_distance(&t.cores, &q.cores).unwrap())
                .collect();
            let oracle = (0..20).fold(0, |b, i| if dists[i] < dists[b] { i } else { b });
            assert_eq!(
                one_nn_classify(&train, &labels, &q, false).unwrap(),
                labels[oracle]
            );
        }
    }

    #[test]
    fn clustering_accuracy_examples() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(clustering_accuracy(&truth, &truth, 3).unwrap(), 1.0);
        let relabeled = vec![2, 2, 0, 0, 1, 1];
        assert_eq!(clustering_accuracy(&relabeled, &truth, 3).unwrap(), 1.0);
        let mut r = trng(10);
        let truth: Vec<usize> = (0..50).map(|_| r.random_range(0..2)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if r.random::<bool>() { 1 - t } else { t })
            .collect();
        let same = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let oracle = same.max(50 - same) as f64 / 50.0;
        assert_eq!(clustering_accuracy(&pred, &truth, 2).unwrap(), oracle);
        // Hungarian path above eight clusters
        let truth: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| (t * 3 + 1) % 10).collect();
        assert_eq!(clustering_accuracy(&pred, &truth, 10).unwrap(), 1.0);
        assert!(clustering_accuracy(&[0, 3], &[0, 1], 2).is_err());
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    }

    fn spec(k: usize, n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec::separated(k, (2, 2, 1, 1), 10.0, 0.5, 0.2, n, seed)
    }

    #[test]
    fn synth_noiseless_samples_equal_means() {
        let mut s = spec(3, 30, 1);
        s.latent_scale = 0.0;
        for c in &mut s.components {
            c.sigma2 = 0.0;
        }
        let (set, z) = synth_generate(&s).unwrap();
        for (x, &k) in set.samples().iter().zip(&z) {
            assert_eq!(x, &s.components[k].mean);
        }
        assert_eq!(synth_generate(&s).unwrap().0, set);
    }

    #[test]
    fn synth_mixing_proportions() {
        let mut s = spec(3, 100_000, 2);
        let w = [0.2, 0.5, 0.3];
        for (c, &w) in s.components.iter_mut().zip(&w) {
            c.weight = w;
        }
        let (_, z) = synth_generate(&s).unwrap();
        for (k, &wk) in w.iter().enumerate() {
            let frac = z.iter().filter(|&&v| v == k).count() as f64 / z.len() as f64;
            assert!(
                (frac - wk).abs() < 0.01 * wk.max(0.1),
                "component {k}: {frac}"
            );
        }
    }

    #[test]
    fn synth_covariance_matches_model() {
        let mut s = SyntheticSpec::separated(1, (2, 2, 2, 1), 0.0, 1.0, 0.3, 100_000, 3);
        s.components[0].mean = Matrix::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let (set, _) = synth_generate(&s).unwrap();
        let comp = &s.components[0];
        let mut cov = kron(
            &comp.right.matmul_t(&comp.right),
            &comp.left.matmul_t(&comp.left),
        )
        .unwrap();
        cov.add_diag(comp.sigma2);
        let mu = vecm(&comp.mean);
        let mut emp = Matrix::zeros(4, 4);
        for x in set.samples() {
            let v: Vec<f64> = vecm(x).iter().zip(&mu).map(|(a, b)| a - b).collect();
            for i in 0..4 {
                for j in 0..4 {
                    emp[(i, j)] += v[i] * v[j] / set.len() as f64;
                }
            }
        }
        let rel = (&emp - &cov).frobenius() / cov.frobenius();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }

    fn separable_set(seed: u64) -> SampleSet {
        let mut r = trng(seed);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u32 {
            for _ in 0..20 {
                let base = if class == 0 { 0.1 } else { 0.9 };
                samples.push(Matrix::from_fn(4, 4, |_, _| {
                    base + 0.02 * crate::rng::standard_normal(&mut r)
                }));
                labels.push(class);
            }
        }
        SampleSet::new(samples, Some(labels)).unwrap()
    }

    #[test]
    fn recognition_on_separable_data() {
        let data = separable_set(11);
        for kind in ModelKind::ALL {
            let cfg = RecognitionConfig {
                trials: 3,
                train_per_class: 8,
                max_iters: 10,
                ..RecognitionConfig::new(kind, 2, 2, 2)
            };
            let res = run_recognition(&data, &cfg).unwrap();
            assert!(res.trials.iter().all(|t| t.accuracy == 1.0), "{kind}");
            assert_eq!(res.seeds, vec![0, 1, 2]);
            assert_eq!(res.trials[0].train_size, 16);
            assert_eq!(res.trials[0].test_size, 24);
            let again = run_recognition(&data, &cfg).unwrap();
            let accs =
                |r: &RecognitionResult| r.trials.iter().map(|t| t.accuracy).collect::<Vec<_>>();
            assert_eq!(accs(&res), accs(&again));
        }
        let single = RecognitionConfig {
            trials: 1,
            train_per_class: 4,
            ..RecognitionConfig::new(ModelKind::Glram, 1, 2, 2)
        };
        assert_eq!(run_recognition(&data, &single).unwrap().std, 0.0);
    }

    #[test]
    fn protocol_shape_for_face_layout() {
        // 15 subjects × 11 images, 6 train each
        let mut r = trng(12);
        let samples: Vec<Matrix> = (0..165).map(|_| random_matrix(&mut r, 3, 3)).collect();
        let labels: Vec<u32> = (0..165).map(|i| i / 11).collect();
        let data = SampleSet::new(samples, Some(labels)).unwrap();
        let cfg = RecognitionConfig {
            trials: 1,
            ..RecognitionConfig::new(ModelKind::Glram, 1, 2, 2)
        };
        let res = run_recognition(&data, &cfg).unwrap();
        assert_eq!(
            (res.trials[0].train_size, res.trials[0].test_size),
            (90, 75)
        );
    }

    #[test]
    fn csv_rows_and_cell() {
        let data = separable_set(13);
        let cfg = RecognitionConfig {
            trials: 2,
            train_per_class: 4,
            ..RecognitionConfig::new(ModelKind::Glram, 1, 2, 2)
        };
        let res = run_recognition(&data, &cfg).unwrap();
        let rows = trial_rows(&res, true);
        assert_eq!(rows.lines().count(), 2);
        assert!(rows
            .lines()
            .all(|l| l.split(',').count() == trial_csv_header(true).split(',').count()));
        assert!(!rows.contains('\r'));
        let bare = trial_rows(&res, false);
        assert!(bare
            .lines()
            .all(|l| l.split(',').count() == trial_csv_header(false).split(',').count()));
        assert_eq!(table_cell(&res), "1.0000±0.0000");
    }
}
