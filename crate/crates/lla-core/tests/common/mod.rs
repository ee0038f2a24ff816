//! Shared helpers for the oracle tests. The dense solver here is
//! deliberately independent of the crate's own factorizations: plain
//! Gaussian elimination with partial pivoting.

use lla_core::datagen::{stream_rng, Gaussian};
use lla_core::tensor::Matrix;

pub fn randn_matrix(rows: usize, cols: usize, seed: u64, sample: u64) -> Matrix {
    let mut rng = stream_rng(seed, sample, 0);
    let mut g = Gaussian::new();
    let mut m = Matrix::zeros(rows, cols);
    g.fill(&mut rng, m.data_mut());
    m
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut m = vec![vec![0.0f64; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.get(i, j);
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix in oracle solve");
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col] / p;
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// Raw (unshifted) inner-product kernel weight.
pub fn raw_weight(q: &[f64], k: &[f64], h: f64) -> f64 {
    let mut s = 0.0;
    for (a, b) in q.iter().zip(k) {
        s += a * b;
    }
    (s / h).exp()
}

/// Central finite differences of a scalar function of one matrix input.
pub fn central_fd<F: FnMut(&Matrix) -> f64>(x: &Matrix, step: f64, mut f: F) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + step);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - step);
            out.set(i, j, (f(&plus) - f(&minus)) / (2.0 * step));
        }
    }
    out
}

/// Max over entries of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut worst = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let denom = x.abs().max(y.abs()).max(floor);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}
