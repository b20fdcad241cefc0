//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    (-gamma * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. `None`
/// when a pivot vanishes.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Exact SVM dual optimum by enumerating every assignment of each
/// multiplier to {0, C, free}. For each assignment the free multipliers
/// solve the stationarity system; the best feasible candidate is the
/// optimum because the dual is concave. Practical up to about 10 points.
pub fn brute_force_dual(points: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> (f64, Vec<f64>) {
    let n = points.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * rbf(&points[i], &points[j], gamma))
                .collect()
        })
        .collect();
    let objective = |a: &[f64]| {
        let quad: f64 = (0..n).map(|i| (0..n).map(|j| a[i] * q[i][j] * a[j]).sum::<f64>()).sum();
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut state = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        let feasible = if free.is_empty() {
            alpha.iter().zip(y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-12
        } else {
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[r][s] = q[i][j];
                }
                a[r][m] = y[i];
                a[m][r] = y[i];
                b[r] = 1.0 - (0..n).filter(|&j| state[j] == 1).map(|j| q[i][j] * c).sum::<f64>();
            }
            b[m] = -(0..n).filter(|&j| state[j] == 1).map(|j| y[j] * c).sum::<f64>();
            match solve(a, b) {
                Some(x) if x[..m].iter().all(|&v| v >= -1e-12 && v <= c + 1e-12) => {
                    for (r, &i) in free.iter().enumerate() {
                        alpha[i] = x[r].clamp(0.0, c);
                    }
                    true
                }
                _ => false,
            }
        };
        if feasible {
            let f = objective(&alpha);
            if f > best.0 {
                best = (f, alpha);
            }
        }
        let Some(i) = state.iter().position(|&s| s < 2) else {
            return best;
        };
        state[i] += 1;
        for s in &mut state[..i] {
            *s = 0;
        }
    }
}

/// `|X_k|²` of the plain O(K²) DFT.
pub fn naive_dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * w.cos();
                im += v * w.sin();
            }
            re * re + im * im
        })
        .collect()
}

pub fn population_variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Lower Cholesky factor, `None` if the matrix is not positive definite.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Random binary problem with both labels present.
pub fn random_problem<R: Rng>(rng: &mut R, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    (points, y)
}
