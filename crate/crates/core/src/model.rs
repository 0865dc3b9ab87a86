//! The mixture model: parameters, variational E-step, M-step and the EM loop.
//!
//! Component `k` explains a p×q sample as `X = L_k B R_kᵀ + M_k + E` with
//! `B ~ N(0, I_r, I_c)` and `vec(E) ~ N(0, σ²_k I)`. The latent posterior of
//! `B` is approximated per (sample, component) by a matrix normal
//! `N(Q, T, S)` whose vectorized covariance is `S ⊗ T`.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::linalg::{spd_factorize, spd_solve, LinalgError, Matrix, SteinSolver};
use crate::matvar::ComponentMarginal;
use crate::persist::{Container, PersistError};
use crate::rng::{self, Rng};

pub const MODEL_HEADER: &str = "MIXB2DPPCA/1";

/// Lower bound applied to every noise variance estimate.
pub const SIGMA2_FLOOR: f64 = 1e-10;

/// Components whose responsibility mass falls below this fraction of `N` are dead.
pub const DEAD_FRACTION: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Matrix,
    pub left: Matrix,
    pub right: Matrix,
    pub sigma2: f64,
}

impl Component {
    /// `L Q Rᵀ + M`.
    pub fn reconstruct(&self, core: &Matrix) -> Matrix {
        let mut x = self.left.matmul(core).matmul_t(&self.right);
        x.add_scaled(1.0, &self.mean);
        x
    }

    fn marginal(&self) -> Result<ComponentMarginal> {
        ComponentMarginal::new(&self.mean, &self.left, &self.right, self.sigma2)
    }
}

/// Sample and latent dimensions `(p, q, r, c)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub c: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    dims: Dims,
    components: Vec<Component>,
}

impl MixtureParams {
    pub fn new(dims: Dims, components: Vec<Component>) -> Result<Self> {
        let params = Self { dims, components };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { p, q, r, c } = self.dims;
        if self.components.is_empty() {
            return Err(Error::InvalidConfig(
                "mixture needs at least one component".into(),
            ));
        }
        if r == 0 || c == 0 || r > p || c > q {
            return Err(Error::InvalidConfig(format!(
                "latent size {r}x{c} must be nonzero and fit within {p}x{q}"
            )));
        }
        let total: f64 = self.components.iter().map(|k| k.weight).sum();
        if (total - 1.0).abs() > 1e-12 || self.components.iter().any(|k| !(k.weight >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "mixing weights must be non-negative and sum to 1 (sum {total})"
            )));
        }
        for comp in &self.components {
            let shapes = [
                (comp.mean.shape(), (p, q)),
                (comp.left.shape(), (p, r)),
                (comp.right.shape(), (q, c)),
            ];
            if let Some(&(actual, expected)) = shapes.iter().find(|(a, e)| a != e) {
                return Err(Error::ShapeMismatch { expected, actual });
            }
            if !(comp.sigma2 > 0.0) {
                return Err(LinalgError::NonPositiveNoise(comp.sigma2).into());
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &Component {
        &self.components[k]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn to_container(&self, meta: &[(String, String)]) -> Container {
        let mut out = Container::new(MODEL_HEADER);
        for (k, v) in meta {
            out.push_meta(k.clone(), v.clone());
        }
        let Dims { p, q, r, c } = self.dims;
        for (name, v) in [("p", p), ("q", q), ("r", r), ("c", c)] {
            out.push_dim(name, v);
        }
        out.push_dim("K", self.components.len());
        for (k, comp) in self.components.iter().enumerate() {
            out.push_scalar(format!("component{k}/pi"), comp.weight);
            out.push_matrix(format!("component{k}/M"), &comp.mean);
            out.push_matrix(format!("component{k}/L"), &comp.left);
            out.push_matrix(format!("component{k}/R"), &comp.right);
            out.push_scalar(format!("component{k}/sigma2"), comp.sigma2);
        }
        out
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_header(MODEL_HEADER)?;
        let dims = Dims {
            p: c.dim("p")?,
            q: c.dim("q")?,
            r: c.dim("r")?,
            c: c.dim("c")?,
        };
        let kk = c.dim("K")?;
        let components = (0..kk)
            .map(|k| {
                Ok(Component {
                    weight: c.scalar(&format!("component{k}/pi"))?,
                    mean: c.matrix(&format!("component{k}/M"), dims.p, dims.q)?,
                    left: c.matrix(&format!("component{k}/L"), dims.p, dims.r)?,
                    right: c.matrix(&format!("component{k}/R"), dims.q, dims.c)?,
                    sigma2: c.scalar(&format!("component{k}/sigma2"))?,
                })
            })
            .collect::<std::result::Result<Vec<_>, PersistError>>()?;
        Self::new(dims, components)
    }
}

/// Variational posterior `N(Q, T, S)` of one latent core.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEntry {
    /// Posterior mean `Q` (r×c).
    pub core: Matrix,
    /// Row covariance `T` (r×r).
    pub row_cov: Matrix,
    /// Column covariance `S` (c×c).
    pub col_cov: Matrix,
}

impl LatentEntry {
    /// `Q = 0`, `T = I_r`, `S = I_c`.
    pub fn prior(r: usize, c: usize) -> Self {
        Self {
            core: Matrix::zeros(r, c),
            row_cov: Matrix::identity(r),
            col_cov: Matrix::identity(c),
        }
    }
}

/// Latent posteriors for every (sample, component) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    components: usize,
    entries: Vec<LatentEntry>,
}

impl LatentPosterior {
    pub fn prior(n: usize, k: usize, r: usize, c: usize) -> Self {
        Self {
            components: k,
            entries: vec![LatentEntry::prior(r, c); n * k],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.components.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, n: usize, k: usize) -> &LatentEntry {
        &self.entries[n * self.components + k]
    }

    pub fn set(&mut self, n: usize, k: usize, entry: LatentEntry) {
        self.entries[n * self.components + k] = entry;
    }

    /// The `K` posterior means of sample `n`.
    pub fn cores(&self, n: usize) -> Vec<Matrix> {
        (0..self.components)
            .map(|k| self.get(n, k).core.clone())
            .collect()
    }
}

/// Posterior component probabilities, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    components: usize,
    gamma: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidConfig(
                "responsibility rows must share a nonzero width".into(),
            ));
        }
        Ok(Self {
            components: k,
            gamma: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.gamma.len() / self.components
    }

    pub fn num_components(&self) -> usize {
        self.components
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.gamma[n * self.components..(n + 1) * self.components]
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.gamma[n * self.components + k]
    }

    /// `N_k = Σ_n γ_nk`.
    pub fn counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.components];
        for row in self.gamma.chunks_exact(self.components) {
            for (c, g) in counts.iter_mut().zip(row) {
                *c += g;
            }
        }
        counts
    }

    /// Most responsible component of sample `n`; ties go to the lowest index.
    pub fn argmax(&self, n: usize) -> usize {
        argmax(self.row(n))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The second-order posterior expectations used by the M-step.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondMoments {
    /// `⟨BᵀB⟩` (c×c).
    pub btb: Matrix,
    /// `⟨Bᵀ LᵀL B⟩` (c×c).
    pub btllb: Matrix,
    /// `⟨B RᵀR Bᵀ⟩` (r×r).
    pub brrbt: Matrix,
}

pub fn second_moments(entry: &LatentEntry, left: &Matrix, right: &Matrix) -> SecondMoments {
    let gl = left.t_matmul(left);
    let gr = right.t_matmul(right);
    SecondMoments {
        btb: btb(entry),
        btllb: btllb(entry, &gl),
        brrbt: brrbt(entry, &gr),
    }
}

fn btb(e: &LatentEntry) -> Matrix {
    let mut m = e.core.t_matmul(&e.core);
    m.add_scaled(e.row_cov.trace(), &e.col_cov);
    m
}

/// `Qᵀ G Q + S tr(T G)` with `G = LᵀL`.
fn btllb(e: &LatentEntry, gl: &Matrix) -> Matrix {
    let mut m = e.core.t_matmul(&gl.matmul(&e.core));
    m.add_scaled(e.row_cov.dot(gl), &e.col_cov);
    m
}

/// `Q G Qᵀ + T tr(S G)` with `G = RᵀR`.
fn brrbt(e: &LatentEntry, gr: &Matrix) -> Matrix {
    let mut m = e.core.matmul(gr).matmul_t(&e.core);
    m.add_scaled(e.col_cov.dot(gr), &e.row_cov);
    m
}

/// Inner-loop controls for the coupled `T`/`S` fixed point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerLoop {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for InnerLoop {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 50,
        }
    }
}

/// Per-component quantities shared by every sample in an E-step.
pub(crate) struct ComponentCache<'a> {
    comp: &'a Component,
    gl: Matrix,
    gr: Matrix,
    stein: SteinSolver,
}

impl<'a> ComponentCache<'a> {
    pub(crate) fn new(comp: &'a Component) -> Result<Self> {
        let mut gl = comp.left.t_matmul(&comp.left);
        let mut gr = comp.right.t_matmul(&comp.right);
        gl.symmetrize();
        gr.symmetrize();
        let stein = SteinSolver::new(&gl, &gr, comp.sigma2)?;
        Ok(Self {
            comp,
            gl,
            gr,
            stein,
        })
    }

    /// Posterior mean: solves `LᵀL Q RᵀR + σ² Q = Lᵀ(X − M)R`.
    pub(crate) fn core(&self, x: &Matrix) -> Result<Matrix> {
        let resid = x - &self.comp.mean;
        let y = self.comp.left.t_matmul(&resid).matmul(&self.comp.right);
        Ok(self.stein.solve(&y)?)
    }

    /// Returns the updated entry and whether the `T`/`S` iteration converged.
    pub(crate) fn update(
        &self,
        x: &Matrix,
        prev: &LatentEntry,
        inner: InnerLoop,
    ) -> Result<(LatentEntry, bool)> {
        let s2 = self.comp.sigma2;
        let (r, c) = (self.gl.rows(), self.gr.rows());
        let mut t = prev.row_cov.clone();
        let mut s = prev.col_cov.clone();
        let mut converged = false;
        for _ in 0..inner.max_sweeps {
            let mut a = self.gl.scale(self.gr.dot(&s));
            a.add_diag(s2 * s.trace());
            let t_new = spd_inverse(&a)?.scale(c as f64 * s2);
            let mut b = self.gr.scale(self.gl.dot(&t_new));
            b.add_diag(s2 * t_new.trace());
            let s_new = spd_inverse(&b)?.scale(r as f64 * s2);
            let dt = (&t_new - &t).frobenius() / t.frobenius().max(f64::MIN_POSITIVE);
            let ds = (&s_new - &s).frobenius() / s.frobenius().max(f64::MIN_POSITIVE);
            t = t_new;
            s = s_new;
            if dt.max(ds) < inner.tol {
                converged = true;
                break;
            }
        }
        Ok((
            LatentEntry {
                core: self.core(x)?,
                row_cov: t,
                col_cov: s,
            },
            converged,
        ))
    }
}

fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    let mut a = a.clone();
    a.symmetrize();
    Ok(spd_factorize(&a)?.inverse())
}

/// One variational update of the posterior of sample `x` under component `k`.
pub fn update_latent(
    x: &Matrix,
    params: &MixtureParams,
    k: usize,
    prev: &LatentEntry,
) -> Result<LatentEntry> {
    let cache = ComponentCache::new(params.component(k))?;
    Ok(cache.update(x, prev, InnerLoop::default())?.0)
}

/// Variational updates of every (sample, component) posterior, warm-started from `prev`.
pub fn update_latents(
    data: &SampleSet,
    params: &MixtureParams,
    prev: &LatentPosterior,
    inner: InnerLoop,
) -> Result<LatentPosterior> {
    let caches = params
        .components
        .iter()
        .map(ComponentCache::new)
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<LatentEntry>> = data
        .samples()
        .par_iter()
        .enumerate()
        .map(|(n, x)| {
            caches
                .iter()
                .enumerate()
                .map(|(k, cache)| Ok(cache.update(x, prev.get(n, k), inner)?.0))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(LatentPosterior {
        components: params.num_components(),
        entries: rows.into_iter().flatten().collect(),
    })
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_row(logs: &[f64], sample: usize) -> Result<Vec<f64>> {
    let lse = log_sum_exp(logs);
    if !lse.is_finite() {
        return Err(Error::ZeroLikelihood { sample });
    }
    Ok(logs.iter().map(|v| (v - lse).exp()).collect())
}

fn marginals(params: &MixtureParams) -> Result<Vec<ComponentMarginal>> {
    params.components.iter().map(Component::marginal).collect()
}

fn log_weighted(
    x: &Matrix,
    params: &MixtureParams,
    margs: &[ComponentMarginal],
) -> Result<Vec<f64>> {
    params
        .components
        .iter()
        .zip(margs)
        .map(|(comp, m)| Ok(comp.weight.ln() + m.loglik(x)?))
        .collect()
}

/// `γ_nk ∝ π_k p(X_n | k)`, normalized in log space.
pub fn responsibilities(data: &SampleSet, params: &MixtureParams) -> Result<Responsibilities> {
    let margs = marginals(params)?;
    let rows: Vec<Vec<f64>> = data
        .samples()
        .par_iter()
        .enumerate()
        .map(|(n, x)| normalize_row(&log_weighted(x, params, &margs)?, n))
        .collect::<Result<_>>()?;
    Responsibilities::from_rows(rows)
}

/// Mixture log-likelihood `Σ_n log Σ_k π_k p(X_n | k)`.
pub fn log_likelihood(data: &SampleSet, params: &MixtureParams) -> Result<f64> {
    let margs = marginals(params)?;
    let per: Vec<f64> = data
        .samples()
        .par_iter()
        .map(|x| Ok(log_sum_exp(&log_weighted(x, params, &margs)?)))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum())
}

/// New weights and means; `means[k]` is `None` for a dead component.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightsAndMeans {
    pub weights: Vec<f64>,
    pub means: Vec<Option<Matrix>>,
}

impl WeightsAndMeans {
    pub fn dead(&self) -> Vec<usize> {
        (0..self.means.len())
            .filter(|&k| self.means[k].is_none())
            .collect()
    }
}

pub fn update_pi_means(data: &SampleSet, gamma: &Responsibilities) -> WeightsAndMeans {
    let n = data.len() as f64;
    let (p, q) = data.dims();
    let counts = gamma.counts();
    let means = counts
        .iter()
        .enumerate()
        .map(|(k, &nk)| {
            if nk < DEAD_FRACTION * n {
                return None;
            }
            let mut acc = Matrix::zeros(p, q);
            for (i, x) in data.samples().iter().enumerate() {
                let g = gamma.get(i, k);
                if g != 0.0 {
                    acc.add_scaled(g, x);
                }
            }
            Some(acc.scale(1.0 / nk))
        })
        .collect();
    WeightsAndMeans {
        weights: counts.iter().map(|nk| nk / n).collect(),
        means,
    }
}

/// Closed-form maximization for one component; `None` when its mass is dead.
fn mstep_component(
    data: &SampleSet,
    gamma: &Responsibilities,
    latent: &LatentPosterior,
    comp: &Component,
    k: usize,
) -> Result<Component> {
    let (p, q) = data.dims();
    let r = comp.left.cols();
    let c = comp.right.cols();
    let gr = comp.right.t_matmul(&comp.right);

    let mut left_num = Matrix::zeros(p, r);
    let mut left_den = Matrix::zeros(r, r);
    let mut nk = 0.0;
    let mut resid_sq = 0.0;
    for (n, x) in data.samples().iter().enumerate() {
        let g = gamma.get(n, k);
        if g == 0.0 {
            continue;
        }
        let e = latent.get(n, k);
        let resid = x - &comp.mean;
        nk += g;
        resid_sq += g * resid.frobenius_sq();
        left_num.add_scaled(g, &resid.matmul(&comp.right).matmul_t(&e.core));
        left_den.add_scaled(g, &brrbt(e, &gr));
    }
    let left = solve_right(&left_num, &left_den).map_err(|source| Error::SingularMoment {
        component: k,
        source,
    })?;

    let gl = left.t_matmul(&left);
    let mut right_num = Matrix::zeros(q, c);
    let mut right_den = Matrix::zeros(c, c);
    for (n, x) in data.samples().iter().enumerate() {
        let g = gamma.get(n, k);
        if g == 0.0 {
            continue;
        }
        let e = latent.get(n, k);
        let resid = x - &comp.mean;
        right_num.add_scaled(g, &resid.t_matmul(&left).matmul(&e.core));
        right_den.add_scaled(g, &btllb(e, &gl));
    }
    let right = solve_right(&right_num, &right_den).map_err(|source| Error::SingularMoment {
        component: k,
        source,
    })?;

    // Σγ‖X−M‖² − 2 Σγ tr(R Qᵀ Lᵀ (X−M)) + Σγ tr(⟨BᵀLᵀLB⟩ RᵀR)
    let gr_new = right.t_matmul(&right);
    let cross = right.dot(&right_num);
    let quad = right_den.dot(&gr_new);
    let sigma2 = ((resid_sq - 2.0 * cross + quad) / ((p * q) as f64 * nk)).max(SIGMA2_FLOOR);

    Ok(Component {
        weight: comp.weight,
        mean: comp.mean.clone(),
        left,
        right,
        sigma2,
    })
}

/// `num · den⁻¹` for symmetric positive definite `den`.
fn solve_right(num: &Matrix, den: &Matrix) -> std::result::Result<Matrix, LinalgError> {
    let mut den = den.clone();
    den.symmetrize();
    let f = spd_factorize(&den)?;
    Ok(spd_solve(&f, &num.transpose())?.transpose())
}

/// Updates `L_k`, then `R_k` with moments recomputed under the new `L_k`, then `σ²_k`.
pub fn mstep(
    data: &SampleSet,
    gamma: &Responsibilities,
    latent: &LatentPosterior,
    params: &MixtureParams,
) -> Result<MixtureParams> {
    let counts = gamma.counts();
    let n = data.len() as f64;
    let components = params
        .components
        .iter()
        .enumerate()
        .map(|(k, comp)| {
            if counts[k] < DEAD_FRACTION * n {
                return Err(Error::DeadComponent {
                    component: k,
                    mass: counts[k],
                });
            }
            mstep_component(data, gamma, latent, comp, k)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureParams::new(params.dims, components)
}

/// Expected complete-data log-likelihood under the current posteriors
/// (up to additive constants).
pub fn expected_loglik(
    data: &SampleSet,
    gamma: &Responsibilities,
    latent: &LatentPosterior,
    params: &MixtureParams,
) -> f64 {
    let (p, q) = data.dims();
    let pq = (p * q) as f64;
    let mut total = 0.0;
    for (k, comp) in params.components.iter().enumerate() {
        let gl = comp.left.t_matmul(&comp.left);
        let gr = comp.right.t_matmul(&comp.right);
        let s2 = comp.sigma2;
        for (n, x) in data.samples().iter().enumerate() {
            let g = gamma.get(n, k);
            if g == 0.0 {
                continue;
            }
            let e = latent.get(n, k);
            let resid = x - &comp.mean;
            let proj = comp.left.t_matmul(&resid).matmul(&comp.right);
            let term = comp.weight.ln()
                - 0.5 * pq * s2.ln()
                - 0.5 * btb(e).trace()
                - resid.frobenius_sq() / (2.0 * s2)
                + proj.dot(&e.core) / s2
                - btllb(e, &gl).dot(&gr) / (2.0 * s2);
            total += g * term;
        }
    }
    total
}

/// Draws the starting point: uniform weights, `K` distinct samples as means,
/// standard-normal loadings and unit noise.
pub fn init(data: &SampleSet, k: usize, r: usize, c: usize, seed: u64) -> Result<MixtureParams> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if k == 0 || k > data.len() {
        return Err(Error::InvalidConfig(format!(
            "need 1 ≤ K ≤ N, got K = {k} with N = {}",
            data.len()
        )));
    }
    let (p, q) = data.dims();
    let dims = Dims { p, q, r, c };
    let mut rng = rng::stream(seed, 0);
    let picks = index::sample(&mut rng, data.len(), k).into_vec();
    let components = picks
        .into_iter()
        .map(|i| Component {
            weight: 1.0 / k as f64,
            mean: data.sample(i).clone(),
            left: rng::standard_normal_matrix(&mut rng, p, r),
            right: rng::standard_normal_matrix(&mut rng, q, c),
            sigma2: 1.0,
        })
        .collect();
    MixtureParams::new(dims, components)
}

fn renormalize(components: &mut [Component]) {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub components: usize,
    pub rank_rows: usize,
    pub rank_cols: usize,
    pub max_iters: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the global default.
    pub threads: usize,
    pub inner: InnerLoop,
    pub reinit_budget: usize,
    /// Hold every `σ²_k` at this value instead of estimating it.
    pub fixed_noise: Option<f64>,
    /// Recompute posteriors under the final parameters for the reported error.
    pub recompute_report: bool,
}

impl FitConfig {
    pub fn new(components: usize, rank_rows: usize, rank_cols: usize) -> Self {
        Self {
            components,
            rank_rows,
            rank_cols,
            ..Self::default()
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            components: 1,
            rank_rows: 1,
            rank_cols: 1,
            max_iters: 50,
            epsilon: 1e-3,
            seed: 0,
            threads: 1,
            inner: InnerLoop::default(),
            reinit_budget: 3,
            fixed_noise: None,
            recompute_report: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Average reconstruction error `e(t)`.
    pub recon_error: f64,
    pub expected_loglik: f64,
    /// `N_k` per component.
    pub counts: Vec<f64>,
    /// Components reinitialized during this iteration.
    pub reinitialized: Vec<usize>,
    /// (sample, component) pairs whose `T`/`S` loop hit the sweep cap.
    pub inner_unconverged: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: MixtureParams,
    /// Posteriors recomputed under `params`.
    pub latent: LatentPosterior,
    pub gamma: Responsibilities,
    pub trace: Vec<IterationStats>,
    /// True when the stopping rule fired before `max_iters`.
    pub converged: bool,
    pub reinitializations: Vec<usize>,
}

impl FitResult {
    pub fn reconstructions(&self) -> Vec<Matrix> {
        reconstruct_all(&self.params, &self.gamma, &self.latent)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// `L_k' Q_n^(k') R_k'ᵀ + M_k'` for `k' = argmax_k γ_nk`.
pub fn reconstruct(
    params: &MixtureParams,
    gamma: &Responsibilities,
    latent: &LatentPosterior,
    n: usize,
) -> Matrix {
    let k = gamma.argmax(n);
    params.component(k).reconstruct(&latent.get(n, k).core)
}

pub fn reconstruct_all(
    params: &MixtureParams,
    gamma: &Responsibilities,
    latent: &LatentPosterior,
) -> Vec<Matrix> {
    (0..gamma.num_samples())
        .map(|n| reconstruct(params, gamma, latent, n))
        .collect()
}

/// `sqrt(Σ_n ‖X_n − X̂_n‖²_F / N)`.
pub fn avg_recon_error(data: &SampleSet, recons: &[Matrix]) -> Result<f64> {
    if recons.len() != data.len() {
        return Err(Error::ShapeMismatch {
            expected: (data.len(), 1),
            actual: (recons.len(), 1),
        });
    }
    let mut total = 0.0;
    for (x, xh) in data.samples().iter().zip(recons) {
        if x.shape() != xh.shape() {
            return Err(Error::ShapeMismatch {
                expected: x.shape(),
                actual: xh.shape(),
            });
        }
        total += (x - xh).frobenius_sq();
    }
    Ok((total / data.len() as f64).sqrt())
}

/// Reduced representation of a new sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Posterior mean core under each component.
    pub cores: Vec<Matrix>,
    pub gamma: Vec<f64>,
    pub assigned: usize,
}

impl Projection {
    pub fn reconstruct(&self, params: &MixtureParams) -> Matrix {
        params
            .component(self.assigned)
            .reconstruct(&self.cores[self.assigned])
    }
}

pub fn project_new(x: &Matrix, params: &MixtureParams) -> Result<Projection> {
    let Dims { p, q, .. } = params.dims;
    if x.shape() != (p, q) {
        return Err(Error::ShapeMismatch {
            expected: (p, q),
            actual: x.shape(),
        });
    }
    let cores = params
        .components
        .iter()
        .map(|comp| ComponentCache::new(comp)?.core(x))
        .collect::<Result<Vec<_>>>()?;
    let margs = marginals(params)?;
    let gamma = normalize_row(&log_weighted(x, params, &margs)?, 0)?;
    let assigned = argmax(&gamma);
    Ok(Projection {
        cores,
        gamma,
        assigned,
    })
}

/// Projects many samples, in parallel when a pool is active.
pub fn project_all(data: &SampleSet, params: &MixtureParams) -> Result<Vec<Projection>> {
    data.samples()
        .par_iter()
        .map(|x| project_new(x, params))
        .collect()
}

struct Trainer<'a> {
    data: &'a SampleSet,
    config: &'a FitConfig,
    params: MixtureParams,
    latent: LatentPosterior,
    reinits: Vec<usize>,
    rng: Rng,
}

impl<'a> Trainer<'a> {
    /// Replaces component `k` with a fresh draw centred on a random sample.
    fn reinitialize(&mut self, k: usize, cause: Error) -> Result<()> {
        self.reinits[k] += 1;
        if self.reinits[k] > self.config.reinit_budget {
            return Err(match cause {
                Error::Linalg(source) | Error::SingularMoment { source, .. } => {
                    Error::ComponentCollapse {
                        component: k,
                        source,
                    }
                }
                other => other,
            });
        }
        let Dims { p, q, r, c } = self.params.dims;
        let pick = index::sample(&mut self.rng, self.data.len(), 1).index(0);
        let kk = self.params.num_components() as f64;
        let comp = &mut self.params.components[k];
        comp.mean = self.data.sample(pick).clone();
        comp.left = rng::standard_normal_matrix(&mut self.rng, p, r);
        comp.right = rng::standard_normal_matrix(&mut self.rng, q, c);
        comp.sigma2 = self.config.fixed_noise.unwrap_or(1.0);
        comp.weight = 1.0 / kk;
        renormalize(&mut self.params.components);
        for n in 0..self.data.len() {
            self.latent.set(n, k, LatentEntry::prior(r, c));
        }
        Ok(())
    }

    /// Latent updates for every (n, k); returns the count of capped inner loops.
    fn update_latents(&mut self, reinitialized: &mut Vec<usize>) -> Result<usize> {
        let kk = self.params.num_components();
        loop {
            let caches: Vec<Result<ComponentCache>> = self
                .params
                .components
                .iter()
                .map(ComponentCache::new)
                .collect();
            let inner = self.config.inner;
            let latent = &self.latent;
            let rows: Vec<Vec<Result<(LatentEntry, bool)>>> = self
                .data
                .samples()
                .par_iter()
                .enumerate()
                .map(|(n, x)| {
                    (0..kk)
                        .map(|k| match &caches[k] {
                            Ok(cache) => cache.update(x, latent.get(n, k), inner),
                            Err(_) => Err(Error::InvalidConfig(String::new())),
                        })
                        .collect()
                })
                .collect();

            let mut failed: Vec<(usize, Error)> = Vec::new();
            for (k, cache) in caches.into_iter().enumerate() {
                if let Err(e) = cache {
                    failed.push((k, e));
                }
            }
            for k in 0..kk {
                if failed.iter().any(|(f, _)| *f == k) {
                    continue;
                }
                if let Some(Err(e)) = rows.iter().map(|row| &row[k]).find(|r| r.is_err()) {
                    failed.push((k, clone_numeric(e)));
                }
            }
            if failed.is_empty() {
                let mut unconverged = 0;
                for (n, row) in rows.into_iter().enumerate() {
                    for (k, res) in row.into_iter().enumerate() {
                        let (entry, ok) = res?;
                        unconverged += usize::from(!ok);
                        self.latent.set(n, k, entry);
                    }
                }
                return Ok(unconverged);
            }
            failed.sort_by_key(|(k, _)| *k);
            for (k, e) in failed {
                self.reinitialize(k, e)?;
                reinitialized.push(k);
            }
        }
    }

    fn responsibilities(&mut self, reinitialized: &mut Vec<usize>) -> Result<Responsibilities> {
        loop {
            let bad = self
                .params
                .components
                .iter()
                .enumerate()
                .find_map(|(k, comp)| comp.marginal().err().map(|e| (k, e)));
            match bad {
                Some((k, e)) => {
                    self.reinitialize(k, e)?;
                    reinitialized.push(k);
                }
                None => return responsibilities(self.data, &self.params),
            }
        }
    }

    fn iterate(&mut self, t: usize) -> Result<IterationStats> {
        let start = Instant::now();
        let mut reinitialized = Vec::new();

        let inner_unconverged = self.update_latents(&mut reinitialized)?;
        let mut gamma = self.responsibilities(&mut reinitialized)?;

        let wm = update_pi_means(self.data, &gamma);
        let dead = wm.dead();
        for (k, comp) in self.params.components.iter_mut().enumerate() {
            comp.weight = wm.weights[k];
            if let Some(m) = &wm.means[k] {
                comp.mean = m.clone();
            }
        }
        renormalize(&mut self.params.components);
        for &k in &dead {
            let mass = gamma.counts()[k];
            self.reinitialize(k, Error::DeadComponent { component: k, mass })?;
            reinitialized.push(k);
        }

        let updates: Vec<Option<Result<Component>>> = (0..self.params.num_components())
            .map(|k| {
                (!dead.contains(&k)).then(|| {
                    mstep_component(self.data, &gamma, &self.latent, self.params.component(k), k)
                })
            })
            .collect();
        let mut singular = Vec::new();
        for (k, update) in updates.into_iter().enumerate() {
            match update {
                Some(Ok(mut comp)) => {
                    if let Some(s2) = self.config.fixed_noise {
                        comp.sigma2 = s2;
                    }
                    self.params.components[k] = comp;
                }
                Some(Err(e @ Error::SingularMoment { .. })) => singular.push((k, e)),
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        for (k, e) in singular {
            self.reinitialize(k, e)?;
            reinitialized.push(k);
        }

        if !dead.is_empty() {
            // keep γ consistent with the reset components for the diagnostics
            gamma = responsibilities(self.data, &self.params)?;
        }
        let recons = reconstruct_all(&self.params, &gamma, &self.latent);
        let recon_error = avg_recon_error(self.data, &recons)?;
        let ell = expected_loglik(self.data, &gamma, &self.latent, &self.params);
        reinitialized.sort_unstable();
        reinitialized.dedup();
        let stats = IterationStats {
            iteration: t,
            recon_error,
            expected_loglik: ell,
            counts: gamma.counts(),
            reinitialized,
            inner_unconverged,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        Ok(stats)
    }
}

fn clone_numeric(e: &Error) -> Error {
    match e {
        Error::Linalg(l) => Error::Linalg(l.clone()),
        other => Error::InvalidConfig(other.to_string()),
    }
}

fn validate_config(data: &SampleSet, config: &FitConfig) -> Result<()> {
    if config.fixed_noise.is_some_and(|s2| !(s2 > 0.0)) {
        return Err(LinalgError::NonPositiveNoise(config.fixed_noise.unwrap_or(0.0)).into());
    }
    if config.components == 0 || config.max_iters == 0 || !(config.epsilon > 0.0) {
        return Err(Error::InvalidConfig(
            "K and max_iters must be at least 1 and epsilon positive".into(),
        ));
    }
    let (p, q) = data.dims();
    if config.rank_rows == 0
        || config.rank_cols == 0
        || config.rank_rows > p
        || config.rank_cols > q
    {
        return Err(Error::InvalidConfig(format!(
            "latent size {}x{} must be nonzero and fit within {p}x{q}",
            config.rank_rows, config.rank_cols
        )));
    }
    Ok(())
}

/// Runs a closure inside a pool of `threads` workers (0 = default pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Variational EM. Each iteration updates every latent posterior, then the
/// responsibilities, weights and means, then the loadings and noise levels.
/// Stops after `max_iters` or once `|e(t−1) − e(t)| ≤ ε`.
///
/// The trace records the reconstruction error from the quantities in hand at
/// the end of each iteration. The returned posteriors are recomputed under
/// the final parameters.
pub fn fit(data: &SampleSet, config: &FitConfig) -> Result<FitResult> {
    fit_observed(data, config, |_| {})
}

/// [`fit`] that reports each iteration's statistics as soon as they exist,
/// so callers keep a partial trace when a later iteration fails.
pub fn fit_observed(
    data: &SampleSet,
    config: &FitConfig,
    observer: impl FnMut(&IterationStats) + Send,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    validate_config(data, config)?;
    with_threads(config.threads, || fit_inner(data, config, observer))
}

fn fit_inner(
    data: &SampleSet,
    config: &FitConfig,
    mut observer: impl FnMut(&IterationStats),
) -> Result<FitResult> {
    let mut params = init(
        data,
        config.components,
        config.rank_rows,
        config.rank_cols,
        config.seed,
    )?;
    if let Some(s2) = config.fixed_noise {
        for comp in &mut params.components {
            comp.sigma2 = s2;
        }
    }
    let mut trainer = Trainer {
        data,
        config,
        latent: LatentPosterior::prior(
            data.len(),
            config.components,
            config.rank_rows,
            config.rank_cols,
        ),
        params,
        reinits: vec![0; config.components],
        rng: rng::stream(config.seed, 1),
    };
    let mut trace: Vec<IterationStats> = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    for t in 1..=config.max_iters {
        let stats = trainer.iterate(t)?;
        observer(&stats);
        let stop = trace
            .last()
            .is_some_and(|prev| (prev.recon_error - stats.recon_error).abs() <= config.epsilon);
        trace.push(stats);
        if stop {
            converged = true;
            break;
        }
    }

    // Final posteriors under the returned parameters.
    let mut scratch = Vec::new();
    trainer.update_latents(&mut scratch)?;
    let gamma = trainer.responsibilities(&mut scratch)?;
    if config.recompute_report {
        if let Some(last) = trace.last_mut() {
            let recons = reconstruct_all(&trainer.params, &gamma, &trainer.latent);
            last.recon_error = avg_recon_error(data, &recons)?;
        }
    }
    Ok(FitResult {
        params: trainer.params,
        latent: trainer.latent,
        gamma,
        trace,
        converged,
        reinitializations: trainer.reinits,
    })
}
