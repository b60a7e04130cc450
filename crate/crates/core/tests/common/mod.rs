#![allow(dead_code)]

use execmm::execution::ExecGameParams;
use execmm::DenseMatrix;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.n(), m.n(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), |i, j| m[(i, j)])
}

pub fn max_diff(a: &DenseMatrix, b: &DMatrix<f64>) -> f64 {
    (0..a.n())
        .flat_map(|i| (0..a.n()).map(move |j| (i, j)))
        .map(|(i, j)| (a[(i, j)] - b[(i, j)]).abs())
        .fold(0.0, f64::max)
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Z-matrix whose column sums are at least `w > 0`.
pub fn random_m_plus(r: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let mut g = DenseMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { -r.random_range(0.0..1.0) });
    for j in 0..n {
        let off: f64 = (0..n).filter(|&i| i != j).map(|i| g[(i, j)].abs()).sum();
        g[(j, j)] = off + r.random_range(0.05..1.0);
    }
    g
}

/// Homogeneous execution game with `2(N+1)βφ ≥ α²`.
pub fn random_homogeneous(r: &mut ChaCha8Rng) -> ExecGameParams {
    let n = r.random_range(2..=5);
    let alpha = r.random_range(0.0..2.0);
    let beta = r.random_range(0.2..2.0);
    let floor = alpha * alpha / (2.0 * (n as f64 + 1.0) * beta);
    let phi = floor + r.random_range(0.0..1.0);
    let a_pen = r.random_range(0.05..2.0);
    let mut p = ExecGameParams::constant(n, r.random_range(0.5..2.0), alpha, beta, phi, a_pen);
    p.q0 = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    p.grid_steps = 100;
    p
}
