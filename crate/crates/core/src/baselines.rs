//! Comparison methods: GLRAM (two-sided orthogonal projections fitted by
//! alternating eigen-decompositions) and a mixture of vectorial PPCA fitted
//! by the Tipping–Bishop EM.

use rand::seq::index;
use rayon::prelude::*;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::linalg::{spd_factorize, symmetric_eigen, unvec, vec as vectorize, LinalgError, Matrix};
use crate::matvar::LowRankGaussian;
use crate::model::{argmax, with_threads, Responsibilities, DEAD_FRACTION, SIGMA2_FLOOR};
use crate::persist::{Container, PersistError};
use crate::rng;

pub const GLRAM_HEADER: &str = "GLRAM/1";
pub const MIXPPCA_HEADER: &str = "MIXPPCA/1";

#[derive(Clone, Debug, PartialEq)]
pub struct GlramConfig {
    pub rank_rows: usize,
    pub rank_cols: usize,
    pub max_iters: usize,
    /// Stop once a full iteration lowers the objective by less than this fraction.
    pub tol: f64,
    /// Subtract the global mean before fitting.
    pub center: bool,
}

impl GlramConfig {
    pub fn new(rank_rows: usize, rank_cols: usize) -> Self {
        Self {
            rank_rows,
            rank_cols,
            max_iters: 50,
            tol: 1e-12,
            center: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlramModel {
    /// p×r with orthonormal columns.
    pub left: Matrix,
    /// q×c with orthonormal columns.
    pub right: Matrix,
    /// Global mean, or zeros when fitted without centering.
    pub mean: Matrix,
    /// Training cores `Lᵀ (X_n − mean) R`.
    pub cores: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct GlramFit {
    pub model: GlramModel,
    /// `Σ ‖X_n − L Lᵀ X_n R Rᵀ‖²` after every half-step.
    pub objective: Vec<f64>,
}

impl GlramModel {
    pub fn project(&self, x: &Matrix) -> Matrix {
        self.left.t_matmul(&(x - &self.mean)).matmul(&self.right)
    }

    pub fn reconstruct(&self, core: &Matrix) -> Matrix {
        let mut x = self.left.matmul(core).matmul_t(&self.right);
        x.add_scaled(1.0, &self.mean);
        x
    }

    pub fn reconstructions(&self) -> Vec<Matrix> {
        self.cores.iter().map(|c| self.reconstruct(c)).collect()
    }

    pub fn to_container(&self, meta: &[(String, String)]) -> Container {
        let mut out = Container::new(GLRAM_HEADER);
        for (k, v) in meta {
            out.push_meta(k.clone(), v.clone());
        }
        let (p, r) = self.left.shape();
        let (q, c) = self.right.shape();
        for (name, v) in [
            ("p", p),
            ("q", q),
            ("r", r),
            ("c", c),
            ("N", self.cores.len()),
        ] {
            out.push_dim(name, v);
        }
        out.push_matrix("left", &self.left);
        out.push_matrix("right", &self.right);
        out.push_matrix("mean", &self.mean);
        for (n, core) in self.cores.iter().enumerate() {
            out.push_matrix(format!("core{n}"), core);
        }
        out
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_header(GLRAM_HEADER)?;
        let (p, q, r, cc, n) = (
            c.dim("p")?,
            c.dim("q")?,
            c.dim("r")?,
            c.dim("c")?,
            c.dim("N")?,
        );
        let cores = (0..n)
            .map(|i| c.matrix(&format!("core{i}"), r, cc))
            .collect::<std::result::Result<Vec<_>, PersistError>>()?;
        Ok(Self {
            left: c.matrix("left", p, r)?,
            right: c.matrix("right", q, cc)?,
            mean: c.matrix("mean", p, q)?,
            cores,
        })
    }
}

fn top_eigenvectors(a: &Matrix, k: usize) -> Result<Matrix> {
    let eig = symmetric_eigen(a)?;
    Ok(Matrix::from_fn(a.rows(), k, |i, j| eig.vectors[(i, j)]))
}

fn glram_objective(centered: &[Matrix], left: &Matrix, right: &Matrix) -> f64 {
    centered
        .iter()
        .map(|x| {
            let core = left.t_matmul(x).matmul(right);
            (x - &left.matmul(&core).matmul_t(right)).frobenius_sq()
        })
        .sum()
}

/// Alternates `L ← top-r eigvecs of Σ X R Rᵀ Xᵀ` and `R ← top-c eigvecs of
/// Σ Xᵀ L Lᵀ X`, starting from `R = I_q[:, :c]`.
pub fn glram_fit(data: &SampleSet, config: &GlramConfig) -> Result<GlramFit> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (p, q) = data.dims();
    let (r, c) = (config.rank_rows, config.rank_cols);
    if r == 0 || c == 0 || r > p || c > q || config.max_iters == 0 {
        return Err(Error::InvalidConfig(format!(
            "GLRAM needs 1 ≤ r ≤ {p}, 1 ≤ c ≤ {q} and at least one iteration"
        )));
    }
    let mut mean = Matrix::zeros(p, q);
    if config.center {
        for x in data.samples() {
            mean.add_scaled(1.0 / data.len() as f64, x);
        }
    }
    let centered: Vec<Matrix> = data.samples().iter().map(|x| x - &mean).collect();

    let mut right = Matrix::from_fn(q, c, |i, j| f64::from(u8::from(i == j)));
    let mut left = Matrix::zeros(p, r);
    let mut objective = Vec::with_capacity(2 * config.max_iters);
    for _ in 0..config.max_iters {
        let mut ml = Matrix::zeros(p, p);
        for x in &centered {
            let xr = x.matmul(&right);
            ml.add_scaled(1.0, &xr.matmul_t(&xr));
        }
        ml.symmetrize();
        left = top_eigenvectors(&ml, r)?;
        objective.push(glram_objective(&centered, &left, &right));

        let mut mr = Matrix::zeros(q, q);
        for x in &centered {
            let xl = x.t_matmul(&left);
            mr.add_scaled(1.0, &xl.matmul_t(&xl));
        }
        mr.symmetrize();
        right = top_eigenvectors(&mr, c)?;
        objective.push(glram_objective(&centered, &left, &right));

        let n = objective.len();
        if n >= 4 && objective[n - 3] - objective[n - 1] <= config.tol * objective[n - 3] {
            break;
        }
    }
    let cores = centered
        .iter()
        .map(|x| left.t_matmul(x).matmul(&right))
        .collect();
    Ok(GlramFit {
        model: GlramModel {
            left,
            right,
            mean,
            cores,
        },
        objective,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpcaComponent {
    pub weight: f64,
    /// Column-stacked mean, length `pq`.
    pub mean: Vec<f64>,
    /// `pq × d` loading.
    pub loading: Matrix,
    pub sigma2: f64,
}

impl PpcaComponent {
    fn density(&self) -> Result<LowRankGaussian> {
        LowRankGaussian::new(self.mean.clone(), self.loading.clone(), self.sigma2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixPpcaModel {
    /// Image shape `(p, q)`; samples are column-stacked to length `pq`.
    pub shape: (usize, usize),
    pub components: Vec<PpcaComponent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixPpcaConfig {
    pub components: usize,
    pub latent_dim: usize,
    pub max_iters: usize,
    /// Stop once the log-likelihood gains less than this fraction of its magnitude.
    pub tol: f64,
    pub seed: u64,
    pub threads: usize,
    pub reinit_budget: usize,
    /// Hold every noise variance at this value instead of estimating it.
    pub fixed_noise: Option<f64>,
}

impl MixPpcaConfig {
    pub fn new(components: usize, latent_dim: usize) -> Self {
        Self {
            components,
            latent_dim,
            max_iters: 50,
            tol: 1e-8,
            seed: 0,
            threads: 1,
            reinit_budget: 3,
            fixed_noise: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MixPpcaFit {
    pub model: MixPpcaModel,
    /// Mixture log-likelihood of the parameters entering each iteration, then
    /// of the returned parameters.
    pub loglik: Vec<f64>,
    /// Responsibilities under the returned parameters.
    pub gamma: Responsibilities,
    pub reinitializations: Vec<usize>,
}

impl MixPpcaFit {
    pub fn iterations(&self) -> usize {
        self.loglik.len().saturating_sub(1)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl MixPpcaModel {
    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn latent_dim(&self) -> usize {
        self.components[0].loading.cols()
    }

    fn densities(&self) -> Result<Vec<LowRankGaussian>> {
        self.components.iter().map(PpcaComponent::density).collect()
    }

    fn log_joint(&self, dens: &[LowRankGaussian], t: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(dens)
            .map(|(c, d)| c.weight.ln() + d.loglik(t))
            .collect()
    }

    fn check(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: x.shape(),
            });
        }
        Ok(vectorize(x))
    }

    pub fn loglik(&self, data: &SampleSet) -> Result<f64> {
        let dens = self.densities()?;
        let per: Vec<f64> = data
            .samples()
            .par_iter()
            .map(|x| Ok(log_sum_exp(&self.log_joint(&dens, &self.check(x)?))))
            .collect::<Result<_>>()?;
        Ok(per.iter().sum())
    }

    pub fn responsibilities(&self, x: &Matrix) -> Result<Vec<f64>> {
        let dens = self.densities()?;
        let logs = self.log_joint(&dens, &self.check(x)?);
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::ZeroLikelihood { sample: 0 });
        }
        Ok(logs.iter().map(|v| (v - lse).exp()).collect())
    }

    /// Per-component posterior means `(WᵀW + σ²I)⁻¹ Wᵀ (x − μ)` as d×1 matrices.
    pub fn features(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let t = self.check(x)?;
        self.components
            .iter()
            .map(|c| {
                Ok(Matrix::new(
                    c.loading.cols(),
                    1,
                    posterior_mean(c, &c.density()?, &t),
                )?)
            })
            .collect()
    }

    /// `W z + μ` from the most responsible component, reshaped to p×q.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        let t = self.check(x)?;
        let gamma = self.responsibilities(x)?;
        let comp = &self.components[argmax(&gamma)];
        let z = posterior_mean(comp, &comp.density()?, &t);
        let mut out = comp.mean.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o += comp
                .loading
                .row(i)
                .iter()
                .zip(&z)
                .map(|(w, v)| w * v)
                .sum::<f64>();
        }
        Ok(unvec(&out, self.shape.0, self.shape.1)?)
    }

    pub fn to_container(&self, meta: &[(String, String)]) -> Container {
        let mut out = Container::new(MIXPPCA_HEADER);
        for (k, v) in meta {
            out.push_meta(k.clone(), v.clone());
        }
        out.push_dim("p", self.shape.0);
        out.push_dim("q", self.shape.1);
        out.push_dim("d", self.latent_dim());
        out.push_dim("K", self.components.len());
        for (k, c) in self.components.iter().enumerate() {
            out.push_scalar(format!("component{k}/pi"), c.weight);
            out.push_matrix(
                format!("component{k}/mean"),
                &Matrix::new(1, c.mean.len(), c.mean.clone()).expect("finite mean"),
            );
            out.push_matrix(format!("component{k}/W"), &c.loading);
            out.push_scalar(format!("component{k}/sigma2"), c.sigma2);
        }
        out
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_header(MIXPPCA_HEADER)?;
        let (p, q, d, kk) = (c.dim("p")?, c.dim("q")?, c.dim("d")?, c.dim("K")?);
        let components = (0..kk)
            .map(|k| {
                Ok(PpcaComponent {
                    weight: c.scalar(&format!("component{k}/pi"))?,
                    mean: c
                        .matrix(&format!("component{k}/mean"), 1, p * q)?
                        .into_vec(),
                    loading: c.matrix(&format!("component{k}/W"), p * q, d)?,
                    sigma2: c.scalar(&format!("component{k}/sigma2"))?,
                })
            })
            .collect::<std::result::Result<Vec<_>, PersistError>>()?;
        if components.is_empty() || components.iter().any(|c| !(c.sigma2 > 0.0)) {
            return Err(
                PersistError::Invalid("mixture of PPCA needs positive noise".into()).into(),
            );
        }
        Ok(Self {
            shape: (p, q),
            components,
        })
    }
}

fn wt_times(loading: &Matrix, e: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; loading.cols()];
    for (i, v) in e.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(loading.row(i)) {
            *o += w * v;
        }
    }
    out
}

fn posterior_mean(c: &PpcaComponent, dens: &LowRankGaussian, t: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = t.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
    dens.inner().solve_vec(&wt_times(&c.loading, &e))
}

/// One Tipping–Bishop update of a component given its responsibilities.
/// The `D×D` covariance is never formed: only `S W` and `tr S` are needed.
fn ppca_update(
    data: &[Vec<f64>],
    resp: &[f64],
    comp: &PpcaComponent,
    fixed_noise: Option<f64>,
) -> std::result::Result<PpcaComponent, LinalgError> {
    let dim = comp.mean.len();
    let d = comp.loading.cols();
    let nk: f64 = resp.iter().sum();
    let mut mean = vec![0.0; dim];
    for (t, &g) in data.iter().zip(resp) {
        for (m, v) in mean.iter_mut().zip(t) {
            *m += g * v / nk;
        }
    }
    let w = &comp.loading;
    let mut sw = Matrix::zeros(dim, d);
    let mut tr_s = 0.0;
    let mut e = vec![0.0; dim];
    for (t, &g) in data.iter().zip(resp) {
        if g == 0.0 {
            continue;
        }
        for i in 0..dim {
            e[i] = t[i] - mean[i];
        }
        tr_s += g * e.iter().map(|v| v * v).sum::<f64>() / nk;
        let ew = wt_times(w, &e);
        for (i, ei) in e.iter().enumerate() {
            let s = g * ei / nk;
            for (o, v) in sw.row_mut(i).iter_mut().zip(&ew) {
                *o += s * v;
            }
        }
    }
    let s2 = comp.sigma2;
    let mut m = w.t_matmul(w);
    m.add_diag(s2);
    m.symmetrize();
    let m_fac = spd_factorize(&m)?;
    // W_new = SW (σ²I + M⁻¹WᵀSW)⁻¹ = SW (σ²M + WᵀSW)⁻¹ M
    let mut a = m.scale(s2);
    a.add_scaled(1.0, &w.t_matmul(&sw));
    a.symmetrize();
    let a_fac = spd_factorize(&a)?;
    let loading = crate::linalg::spd_solve(&a_fac, &sw.transpose())?
        .transpose()
        .matmul(&m);
    // σ² = (tr S − tr(SW M⁻¹ W_newᵀ)) / D
    let sw_minv = crate::linalg::spd_solve(&m_fac, &sw.transpose())?.transpose();
    let sigma2 = match fixed_noise {
        Some(v) => v,
        None => ((tr_s - sw_minv.dot(&loading)) / dim as f64).max(SIGMA2_FLOOR),
    };
    Ok(PpcaComponent {
        weight: comp.weight,
        mean,
        loading,
        sigma2,
    })
}

/// Draws `K` distinct samples as means, standard-normal loadings, unit noise.
pub fn mixppca_init(data: &SampleSet, config: &MixPpcaConfig) -> Result<MixPpcaModel> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (p, q) = data.dims();
    let (kk, d) = (config.components, config.latent_dim);
    if kk == 0 || kk > data.len() || d == 0 || d > p * q || config.max_iters == 0 {
        return Err(Error::InvalidConfig(format!(
            "mixture of PPCA needs 1 ≤ K ≤ N, 1 ≤ d ≤ {} and at least one iteration",
            p * q
        )));
    }
    if config.fixed_noise.is_some_and(|v| !(v > 0.0)) {
        return Err(LinalgError::NonPositiveNoise(config.fixed_noise.unwrap_or(0.0)).into());
    }
    let mut rng = rng::stream(config.seed, 0);
    let picks = index::sample(&mut rng, data.len(), kk).into_vec();
    let components = picks
        .into_iter()
        .map(|i| PpcaComponent {
            weight: 1.0 / kk as f64,
            mean: vectorize(data.sample(i)),
            loading: rng::standard_normal_matrix(&mut rng, p * q, d),
            sigma2: config.fixed_noise.unwrap_or(1.0),
        })
        .collect();
    Ok(MixPpcaModel {
        shape: (p, q),
        components,
    })
}

fn responsibility_rows(model: &MixPpcaModel, vecs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let dens = model.densities()?;
    let rows: Vec<(Vec<f64>, f64)> = vecs
        .par_iter()
        .enumerate()
        .map(|(n, t)| {
            let logs = model.log_joint(&dens, t);
            let lse = log_sum_exp(&logs);
            if !lse.is_finite() {
                return Err(Error::ZeroLikelihood { sample: n });
            }
            Ok((logs.iter().map(|v| (v - lse).exp()).collect(), lse))
        })
        .collect::<Result<_>>()?;
    let ll = rows.iter().map(|(_, l)| l).sum();
    Ok((rows.into_iter().map(|(r, _)| r).collect(), ll))
}

pub fn mixppca_fit(data: &SampleSet, config: &MixPpcaConfig) -> Result<MixPpcaFit> {
    let model = mixppca_init(data, config)?;
    with_threads(config.threads, || mixppca_em(data, config, model))
}

fn mixppca_em(
    data: &SampleSet,
    config: &MixPpcaConfig,
    mut model: MixPpcaModel,
) -> Result<MixPpcaFit> {
    let vecs: Vec<Vec<f64>> = data.samples().iter().map(vectorize).collect();
    let n = vecs.len();
    let kk = config.components;
    let mut reinits = vec![0; kk];
    let mut rescue_rng = rng::stream(config.seed, 1);
    let mut loglik = Vec::new();

    let mut reinit = |model: &mut MixPpcaModel, k: usize, cause: Error| -> Result<()> {
        reinits[k] += 1;
        if reinits[k] > config.reinit_budget {
            return Err(match cause {
                Error::Linalg(source) => Error::ComponentCollapse {
                    component: k,
                    source,
                },
                other => other,
            });
        }
        let pick = index::sample(&mut rescue_rng, n, 1).index(0);
        let d = config.latent_dim;
        let comp = &mut model.components[k];
        comp.mean = vecs[pick].clone();
        comp.loading = rng::standard_normal_matrix(&mut rescue_rng, vecs[0].len(), d);
        comp.sigma2 = config.fixed_noise.unwrap_or(1.0);
        comp.weight = 1.0 / kk as f64;
        let total: f64 = model.components.iter().map(|c| c.weight).sum();
        for c in &mut model.components {
            c.weight /= total;
        }
        Ok(())
    };

    for _ in 0..config.max_iters {
        let (rows, ll) = responsibility_rows(&model, &vecs)?;
        let stop = loglik
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= config.tol * ll.abs());
        loglik.push(ll);
        if stop {
            break;
        }
        let mut next = model.clone();
        for k in 0..kk {
            let resp: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let nk: f64 = resp.iter().sum();
            if nk < DEAD_FRACTION * n as f64 {
                reinit(
                    &mut next,
                    k,
                    Error::DeadComponent {
                        component: k,
                        mass: nk,
                    },
                )?;
                continue;
            }
            match ppca_update(&vecs, &resp, &model.components[k], config.fixed_noise) {
                Ok(mut c) => {
                    c.weight = nk / n as f64;
                    next.components[k] = c;
                }
                Err(e) => reinit(&mut next, k, e.into())?,
            }
        }
        let total: f64 = next.components.iter().map(|c| c.weight).sum();
        for c in &mut next.components {
            c.weight /= total;
        }
        model = next;
    }
    let (rows, ll) = responsibility_rows(&model, &vecs)?;
    if loglik.len() == config.max_iters {
        loglik.push(ll);
    }
    Ok(MixPpcaFit {
        model,
        loglik,
        gamma: Responsibilities::from_rows(rows)?,
        reinitializations: reinits,
    })
}
