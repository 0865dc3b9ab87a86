//! Matrix-variate Gaussian densities and per-component marginal likelihoods.
//!
//! A component with loadings `L` (p×r), `R` (q×c) and noise `σ²` induces the
//! marginal `vec(X) ~ N(vec(M), (RRᵀ) ⊗ (LLᵀ) + σ² I)`. The pq×pq covariance
//! is never formed: with `W = R ⊗ L` the Woodbury identity reduces every
//! evaluation to p×q and rc×rc work.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, kron, spd_factorize, spd_logdet, LinalgError, Matrix, SpdFactor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest `p·q` for which the dense covariance path may be used.
pub const DENSE_LIMIT: usize = 64;

/// Isotropic matrix normal `N(M, s_r I_p, s_c I_q)`; its vectorized covariance is `s_r s_c I`.
#[derive(Clone, Debug)]
pub struct MatrixNormal {
    mean: Matrix,
    row_scale: f64,
    col_scale: f64,
}

impl MatrixNormal {
    pub fn new(mean: Matrix, row_scale: f64, col_scale: f64) -> Result<Self> {
        if !(row_scale > 0.0) || !(col_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "matrix normal scales must be positive (row {row_scale}, col {col_scale})"
            )));
        }
        Ok(Self {
            mean,
            row_scale,
            col_scale,
        })
    }

    /// The latent prior `N(0, I_r, I_c)`.
    pub fn standard(rows: usize, cols: usize) -> Self {
        Self {
            mean: Matrix::zeros(rows, cols),
            row_scale: 1.0,
            col_scale: 1.0,
        }
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.row_scale * self.col_scale
    }
}

pub fn matnormal_logpdf(x: &Matrix, dist: &MatrixNormal) -> Result<f64> {
    if x.shape() != dist.mean.shape() {
        return Err(Error::ShapeMismatch {
            expected: dist.mean.shape(),
            actual: x.shape(),
        });
    }
    let var = dist.variance();
    let d = (x.rows() * x.cols()) as f64;
    let sq = (x - &dist.mean).frobenius_sq();
    Ok(-0.5 * (d * (LN_2PI + var.ln()) + sq / var))
}

/// Marginal density of one mixture component with cached Woodbury terms.
#[derive(Clone, Debug)]
pub struct ComponentMarginal {
    mean: Matrix,
    left: Matrix,
    right: Matrix,
    noise_var: f64,
    /// Factor of `σ² I_rc + (RᵀR) ⊗ (LᵀL)`.
    inner: SpdFactor,
    logdet: f64,
}

impl ComponentMarginal {
    pub fn new(mean: &Matrix, left: &Matrix, right: &Matrix, noise_var: f64) -> Result<Self> {
        let (p, q) = mean.shape();
        if left.rows() != p || right.rows() != q {
            return Err(Error::ShapeMismatch {
                expected: (p, q),
                actual: (left.rows(), right.rows()),
            });
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(LinalgError::NonPositiveNoise(noise_var).into());
        }
        let (r, c) = (left.cols(), right.cols());
        let gl = left.t_matmul(left);
        let gr = right.t_matmul(right);
        // vec(Q) is column-stacked, so index (i, j) of Q lives at j·r + i.
        let mut inner = Matrix::from_fn(r * c, r * c, |a, b| {
            let (i, j) = (a % r, a / r);
            let (k, l) = (b % r, b / r);
            gr[(j, l)] * gl[(i, k)]
        });
        inner.add_diag(noise_var);
        inner.symmetrize();
        let inner = spd_factorize(&inner)?;
        let rc = (r * c) as f64;
        let logdet = (p * q) as f64 * noise_var.ln() + spd_logdet(&inner) - rc * noise_var.ln();
        Ok(Self {
            mean: mean.clone(),
            left: left.clone(),
            right: right.clone(),
            noise_var,
            inner,
            logdet,
        })
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// `log det C` for `C = (RRᵀ) ⊗ (LLᵀ) + σ² I`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `log N(vec(x); vec(M), C)` via Woodbury and the determinant lemma.
    pub fn loglik(&self, x: &Matrix) -> Result<f64> {
        if x.shape() != self.mean.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.mean.shape(),
                actual: x.shape(),
            });
        }
        let resid = x - &self.mean;
        let proj = self.left.t_matmul(&resid).matmul(&self.right);
        let y = linalg::vec(&proj);
        let quad = (resid.frobenius_sq() - self.inner.inv_quad(&y)) / self.noise_var;
        let d = (x.rows() * x.cols()) as f64;
        Ok(-0.5 * (d * LN_2PI + self.logdet + clamp_quad(quad)))
    }
}

/// Rounding can push a Woodbury quadratic form slightly negative. A NaN comes
/// from `∞ − ∞` when the residual overflows, i.e. zero density.
fn clamp_quad(quad: f64) -> f64 {
    if quad.is_nan() {
        f64::INFINITY
    } else {
        quad.max(0.0)
    }
}

pub fn marginal_loglik(x: &Matrix, comp: &ComponentMarginal) -> Result<f64> {
    comp.loglik(x)
}

/// Dense `(RRᵀ) ⊗ (LLᵀ) + σ² I`; only permitted when `p·q ≤ DENSE_LIMIT`.
pub fn dense_covariance(left: &Matrix, right: &Matrix, noise_var: f64) -> Result<Matrix> {
    let pq = left.rows() * right.rows();
    if pq > DENSE_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "dense covariance refused for pq = {pq} > {DENSE_LIMIT}"
        )));
    }
    let mut cov = kron(&right.matmul_t(right), &left.matmul_t(left))?;
    cov.add_diag(noise_var);
    cov.symmetrize();
    Ok(cov)
}

/// Reference evaluation with an explicit covariance matrix.
pub fn dense_marginal_loglik(
    x: &Matrix,
    mean: &Matrix,
    left: &Matrix,
    right: &Matrix,
    noise_var: f64,
) -> Result<f64> {
    let cov = dense_covariance(left, right, noise_var)?;
    let f = spd_factorize(&cov)?;
    let diff: Vec<f64> = linalg::vec(&(x - mean));
    let d = diff.len() as f64;
    Ok(-0.5 * (d * (2.0 * PI).ln() + spd_logdet(&f) + f.inv_quad(&diff)))
}

/// Gaussian `N(μ, W Wᵀ + σ² I)` over plain vectors, evaluated through Woodbury.
#[derive(Clone, Debug)]
pub struct LowRankGaussian {
    mean: Vec<f64>,
    loading: Matrix,
    noise_var: f64,
    /// Factor of `WᵀW + σ² I_d`.
    inner: SpdFactor,
    logdet: f64,
}

impl LowRankGaussian {
    pub fn new(mean: Vec<f64>, loading: Matrix, noise_var: f64) -> Result<Self> {
        if loading.rows() != mean.len() {
            return Err(Error::ShapeMismatch {
                expected: (mean.len(), loading.cols()),
                actual: loading.shape(),
            });
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(LinalgError::NonPositiveNoise(noise_var).into());
        }
        let mut inner = loading.t_matmul(&loading);
        inner.add_diag(noise_var);
        inner.symmetrize();
        let inner = spd_factorize(&inner)?;
        let (dim, latent) = loading.shape();
        let logdet = (dim - latent) as f64 * noise_var.ln() + spd_logdet(&inner);
        Ok(Self {
            mean,
            loading,
            noise_var,
            inner,
            logdet,
        })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn inner(&self) -> &SpdFactor {
        &self.inner
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.mean.len());
        let e: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let wte: Vec<f64> = (0..self.loading.cols())
            .map(|j| {
                e.iter()
                    .enumerate()
                    .map(|(i, v)| self.loading[(i, j)] * v)
                    .sum()
            })
            .collect();
        let sq: f64 = e.iter().map(|v| v * v).sum();
        let quad = (sq - self.inner.inv_quad(&wte)) / self.noise_var;
        -0.5 * (e.len() as f64 * LN_2PI + self.logdet + clamp_quad(quad))
    }
}
