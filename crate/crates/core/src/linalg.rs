//! Dense linear-algebra kernels used by the model code.
//!
//! Matrices are small (at most a few thousand entries on a side) and stored
//! row-major. Vectorization follows the column-stacking convention, so that
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use thiserror::Error;

/// Upper bound on the number of entries any single matrix may hold.
pub const MAX_ENTRIES: usize = 100_000_000;

/// Relative eigenvalue threshold below which eigenvalues are treated as zero.
const EIGEN_CLAMP: f64 = 1e-12;

/// Relative asymmetry accepted by the symmetric routines.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{rows}x{cols} exceeds the {MAX_ENTRIES}-entry matrix cap")]
    DimensionOverflow { rows: usize, cols: usize },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("symmetric eigensolver did not converge")]
    EigenNoConvergence,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn check_size(rows: usize, cols: usize) -> Result<usize> {
    match rows.checked_mul(cols) {
        Some(n) if n <= MAX_ENTRIES => Ok(n),
        _ => Err(LinalgError::DimensionOverflow { rows, cols }),
    }
}

/// A dense row-major matrix of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting NaN and infinities.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let n = check_size(rows, cols)?;
        if data.len() != n {
            return Err(LinalgError::LengthMismatch {
                expected: n,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::new(r, c, data).expect("finite entries")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major entries.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Adds `s` to every diagonal entry.
    pub fn add_diag(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }

    /// Sum of elementwise products, i.e. `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Replaces the matrix by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// `‖A − Aᵀ‖_F / max(‖A‖_F, tiny)`.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self[(i, j)] - self[(j, i)];
                acc += 2.0 * d * d;
            }
        }
        acc.sqrt() / self.frobenius().max(f64::MIN_POSITIVE)
    }

    pub fn try_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        check_size(self.rows, other.cols)?;
        Ok(self.matmul(other))
    }

    /// `self · other`. Panics on mismatched inner dimensions.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (n, m, k) = (self.rows, other.cols, self.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[l * m..(l + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Matrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul row mismatch");
        let (n, m) = (self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for l in 0..self.rows {
            let arow = self.row(l);
            let brow = other.row(l);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Matrix {
            rows: n,
            cols: m,
            data: out,
        }
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t column mismatch");
        Matrix::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// Dense matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec length mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_scaled(1.0, rhs);
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_scaled(-1.0, rhs);
        out
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[i, j] · b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let rows = a
        .rows
        .checked_mul(b.rows)
        .ok_or(LinalgError::DimensionOverflow {
            rows: usize::MAX,
            cols: 0,
        })?;
    let cols = a
        .cols
        .checked_mul(b.cols)
        .ok_or(LinalgError::DimensionOverflow {
            rows,
            cols: usize::MAX,
        })?;
    check_size(rows, cols)?;
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a[(i, j)];
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out[(i * b.rows + k, j * b.cols + l)] = s * b[(k, l)];
                }
            }
        }
    }
    Ok(out)
}

/// Column-stacking vectorization.
pub fn vec(x: &Matrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.rows * x.cols);
    for j in 0..x.cols {
        for i in 0..x.rows {
            v.push(x[(i, j)]);
        }
    }
    v
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    let n = check_size(rows, cols)?;
    if v.len() != n {
        return Err(LinalgError::LengthMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    let m = Matrix::from_fn(rows, cols, |i, j| v[j * rows + i]);
    Matrix::new(rows, cols, m.data)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The factor `G` with `A = G Gᵀ`.
    pub fn lower(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.lower.clone(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Solves `G y = b` in place.
    fn forward(&self, b: &mut [f64]) {
        for i in 0..self.dim {
            let mut s = b[i];
            for k in 0..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `Gᵀ x = y` in place.
    fn backward(&self, b: &mut [f64]) {
        for i in (0..self.dim).rev() {
            let mut s = b[i];
            for k in (i + 1)..self.dim {
                s -= self.at(k, i) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `A x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `bᵀ A⁻¹ b`, computed as `‖G⁻¹ b‖²`.
    pub fn inv_quad(&self, b: &[f64]) -> f64 {
        let mut y = b.to_vec();
        self.forward(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    pub fn inverse(&self) -> Matrix {
        let mut inv = spd_solve(self, &Matrix::identity(self.dim)).expect("square identity");
        inv.symmetrize();
        inv
    }
}

/// Cholesky factorization. Fails with the offending pivot when the matrix is
/// not numerically positive definite.
pub fn spd_factorize(a: &Matrix) -> Result<SpdFactor> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch {
            op: "spd_factorize",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows;
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= g[j * n + k] * g[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j });
        }
        let djj = d.sqrt();
        g[j * n + j] = djj;
        for i in (j + 1)..n {
            // lower triangle of a symmetric input
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            g[i * n + j] = s / djj;
        }
    }
    Ok(SpdFactor { dim: n, lower: g })
}

/// Solves `A X = B` column by column.
pub fn spd_solve(f: &SpdFactor, b: &Matrix) -> Result<Matrix> {
    if b.rows != f.dim {
        return Err(LinalgError::DimensionMismatch {
            op: "spd_solve",
            left: (f.dim, f.dim),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(b.rows, b.cols);
    let mut col = vec![0.0; b.rows];
    for j in 0..b.cols {
        for i in 0..b.rows {
            col[i] = b[(i, j)];
        }
        f.forward(&mut col);
        f.backward(&mut col);
        for i in 0..b.rows {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

pub fn spd_logdet(f: &SpdFactor) -> f64 {
    2.0 * (0..f.dim).map(|i| f.at(i, i).ln()).sum::<f64>()
}

/// Eigenvalues in descending order with matching orthonormal eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch {
            op: "symmetric_eigen",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows;
    let mut sym = a.clone();
    sym.symmetrize();
    let dm = nalgebra::DMatrix::from_row_slice(n, n, sym.as_slice());
    let eig = dm
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(LinalgError::EigenNoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    // stable ordering keeps ties deterministic
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Reusable solver for `gl · Q · gr + σ² Q = Y` with fixed `gl`, `gr`, `σ²`.
///
/// Both operators are diagonalized once; each solve then costs two small
/// basis changes and an elementwise division.
#[derive(Clone, Debug)]
pub struct SteinSolver {
    left: SymmetricEigen,
    right: SymmetricEigen,
    sigma2: f64,
}

impl SteinSolver {
    pub fn new(gl: &Matrix, gr: &Matrix, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(LinalgError::NonPositiveNoise(sigma2));
        }
        let mut left = symmetric_eigen(gl)?;
        let mut right = symmetric_eigen(gr)?;
        clamp_spectrum(&mut left.values);
        clamp_spectrum(&mut right.values);
        Ok(Self {
            left,
            right,
            sigma2,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.left.values.len(), self.right.values.len())
    }

    pub fn solve(&self, y: &Matrix) -> Result<Matrix> {
        if y.shape() != self.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "stein_solve",
                left: self.shape(),
                right: y.shape(),
            });
        }
        let ul = &self.left.vectors;
        let ur = &self.right.vectors;
        let mut z = ul.t_matmul(y).matmul(ur);
        for (i, dl) in self.left.values.iter().enumerate() {
            for (j, dr) in self.right.values.iter().enumerate() {
                z[(i, j)] /= dl * dr + self.sigma2;
            }
        }
        Ok(ul.matmul(&z).matmul_t(ur))
    }

    /// `log det(gr ⊗ gl + σ² I)` from the cached spectra.
    pub fn logdet(&self) -> f64 {
        let mut acc = 0.0;
        for dl in &self.left.values {
            for dr in &self.right.values {
                acc += (dl * dr + self.sigma2).ln();
            }
        }
        acc
    }
}

fn clamp_spectrum(values: &mut [f64]) {
    let top = values.iter().fold(0.0_f64, |m, v| m.max(*v));
    for v in values.iter_mut() {
        if *v < EIGEN_CLAMP * top {
            *v = 0.0;
        }
    }
}

/// Solves `gl · Q · gr + σ² Q = y` for symmetric positive semidefinite `gl`, `gr`.
pub fn stein_solve(gl: &Matrix, gr: &Matrix, sigma2: f64, y: &Matrix) -> Result<Matrix> {
    SteinSolver::new(gl, gr, sigma2)?.solve(y)
}
