//! Dense linear-algebra references shared by the integration tests.
//!
//! Everything here is built from explicit circulant matrices, so none of it
//! goes through the FFT code paths under test.

#![allow(dead_code)]

use fof_core::coding::{Codebook, FeatureStack};
use fof_core::signal::{Grid2D, Plane};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_plane(grid: Grid2D, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Plane {
    Plane::from_vec(grid, (0..grid.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_stack(grid: Grid2D, channels: usize, rng: &mut ChaCha8Rng) -> FeatureStack {
    let values = (0..grid.len() * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureStack::from_vec(grid, channels, values).unwrap()
}

pub fn random_codebook(dim: usize, atoms: usize, rng: &mut ChaCha8Rng) -> Codebook {
    let cols: Vec<Vec<f64>> = (0..atoms).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    Codebook::from_columns(&cols).unwrap()
}

/// `C[i][j] = v[(r_i - r_j) mod M, (c_i - c_j) mod N]`: column `j` is `v`
/// cyclically shifted to pixel `j`.
pub fn circulant(grid: Grid2D, v: &[f64]) -> DMatrix<f64> {
    let (m, n) = (grid.rows, grid.cols);
    DMatrix::from_fn(m * n, m * n, |i, j| {
        let (ri, ci) = (i / n, i % n);
        let (rj, cj) = (j / n, j % n);
        v[((ri + m - rj) % m) * n + (ci + n - cj) % n]
    })
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `u = (1/(2 lambda) sum_d C_d C_d^T + I/2)^{-1} y` with `C_d` the
/// circulant of channel `d`.
pub fn dense_ridge(grid: Grid2D, channels: &[Vec<f64>], y: &[f64], lambda: f64) -> DVector<f64> {
    let n = grid.len();
    let mut a = DMatrix::<f64>::identity(n, n) * 0.5;
    for ch in channels {
        let c = circulant(grid, ch);
        a += &c * c.transpose() / (2.0 * lambda);
    }
    a.lu().solve(&DVector::from_column_slice(y)).expect("ridge system is positive definite")
}

/// Dual filter of windowed features `c * x`.
pub fn dense_dcf(x: &FeatureStack, y: &Plane, c: &Plane, lambda: f64) -> DVector<f64> {
    let grid = x.grid();
    let chans: Vec<Vec<f64>> = (0..x.channels()).map(|d| hadamard(x.channel(d), c.values())).collect();
    dense_ridge(grid, &chans, y.values(), lambda)
}

/// Window-code block for one channel:
/// `min_p 1/(4 lambda) ||C_p^T u||^2 + y2^T (p - zc) + mu/2 ||p - zc||^2`,
/// i.e. `p = (C_u C_u^T / (2 lambda) + mu I)^{-1} (mu zc - y2)`.
pub fn dense_window_code(grid: Grid2D, u: &[f64], zc: &[f64], y2: &[f64], mu: f64, lambda: f64) -> DVector<f64> {
    let n = grid.len();
    let cu = circulant(grid, u);
    let a = &cu * cu.transpose() / (2.0 * lambda) + DMatrix::<f64>::identity(n, n) * mu;
    let rhs = DVector::from_iterator(n, zc.iter().zip(y2).map(|(z, y)| mu * z - y));
    a.lu().solve(&rhs).expect("window-code system is positive definite")
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
