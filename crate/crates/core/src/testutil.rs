//! Independent dense oracles shared by unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `scale · AᵀA` for a square standard-normal `A`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let a = random_matrix(rng, n, n);
    let mut m = a.t_matmul(&a).scale(scale);
    m.symmetrize();
    m
}

/// Gaussian elimination with partial pivoting; returns `(solution, log|det|)`.
pub fn dense_solve_logdet(a: &Matrix, b: &Matrix) -> (Matrix, f64) {
    let n = a.rows();
    let m = b.cols();
    let mut aa: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut bb: Vec<Vec<f64>> = (0..n).map(|i| b.row(i).to_vec()).collect();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aa[i][col].abs().total_cmp(&aa[j][col].abs()))
            .unwrap();
        aa.swap(col, piv);
        bb.swap(col, piv);
        let d = aa[col][col];
        logdet += d.abs().ln();
        for row in (col + 1)..n {
            let f = aa[row][col] / d;
            for k in col..n {
                aa[row][k] -= f * aa[col][k];
            }
            for k in 0..m {
                bb[row][k] -= f * bb[col][k];
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for row in (0..n).rev() {
        for k in 0..m {
            let mut s = bb[row][k];
            for j in (row + 1)..n {
                s -= aa[row][j] * x[j][k];
            }
            x[row][k] = s / aa[row][row];
        }
    }
    (Matrix::from_fn(n, m, |i, j| x[i][j]), logdet)
}

pub fn dense_solve(a: &Matrix, b: &Matrix) -> Matrix {
    dense_solve_logdet(a, b).0
}

/// Multivariate normal log-density with a dense covariance.
pub fn dense_gaussian_logpdf(x: &[f64], mean: &[f64], cov: &Matrix) -> f64 {
    let d = x.len();
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let rhs = Matrix::new(d, 1, diff.clone()).unwrap();
    let (sol, logdet) = dense_solve_logdet(cov, &rhs);
    let quad: f64 = diff.iter().zip(sol.as_slice()).map(|(a, b)| a * b).sum();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}
