//! Small dense SPD solves (Cholesky) for the reference paths: per-row
//! covariance systems in the naive forward, MesaNet's preconditioner, and
//! the estimator-form regressions. Desk-scale `d`, nothing clever.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Matrix;

/// In-place lower Cholesky factorization. Returns `false` on a non-positive
/// pivot (matrix not positive definite to working precision).
pub fn cholesky_in_place(a: &mut Matrix) -> bool {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            let l = a.get(j, k);
            d -= l * l;
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = math::sqrt(d);
        a.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= a.get(i, k) * a.get(j, k);
            }
            a.set(i, j, s / d);
        }
    }
    // Zero the strict upper triangle so the factor is self-describing.
    for i in 0..n {
        for j in (i + 1)..n {
            a.set(i, j, 0.0);
        }
    }
    true
}

/// Solve `L L^T x = b` in place given the lower factor.
pub fn cholesky_solve(l: &Matrix, b: &mut [f64]) {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// Factor-once, solve-many helper for SPD systems. Returns `None` when the
/// matrix is not positive definite.
pub struct SpdSolver {
    factor: Matrix,
}

impl SpdSolver {
    pub fn new(mut a: Matrix) -> Option<Self> {
        if cholesky_in_place(&mut a) {
            Some(SpdSolver { factor: a })
        } else {
            None
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        cholesky_solve(&self.factor, &mut x);
        x
    }

}

/// Weighted affine least squares on design rows `(1, x_i^T)` with ridge on
/// the slope block only: minimizes
/// `sum_i w_i ||y_i - b - W x_i||^2 + lambda ||W||_F^2`.
///
/// Returns `(intercept b, slope W)` with `W` of shape `d_y x d_x`, or `None`
/// when the normal matrix is not positive definite.
pub fn weighted_affine_fit(
    xs: &Matrix,
    ys: &Matrix,
    weights: &[f64],
    lambda: f64,
) -> Option<(Vec<f64>, Matrix)> {
    let n = xs.rows();
    let dx = xs.cols();
    let dy = ys.cols();
    debug_assert_eq!(ys.rows(), n);
    debug_assert_eq!(weights.len(), n);

    // Normal matrix over the augmented design (1, x^T).
    let m = dx + 1;
    let mut a = Matrix::zeros(m, m);
    let mut rhs = Matrix::zeros(m, dy);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let x = xs.row(i);
        let y = ys.row(i);
        a.set(0, 0, a.get(0, 0) + w);
        for p in 0..dx {
            let wx = w * x[p];
            a.set(p + 1, 0, a.get(p + 1, 0) + wx);
            a.set(0, p + 1, a.get(0, p + 1) + wx);
            for q in 0..dx {
                a.set(p + 1, q + 1, a.get(p + 1, q + 1) + wx * x[q]);
            }
            for t in 0..dy {
                rhs.set(p + 1, t, rhs.get(p + 1, t) + wx * y[t]);
            }
        }
        for t in 0..dy {
            rhs.set(0, t, rhs.get(0, t) + w * y[t]);
        }
    }
    for p in 0..dx {
        a.set(p + 1, p + 1, a.get(p + 1, p + 1) + lambda);
    }

    let solver = SpdSolver::new(a)?;
    let mut intercept = vec![0.0; dy];
    let mut slope = Matrix::zeros(dy, dx);
    let mut col = vec![0.0; m];
    for t in 0..dy {
        for r in 0..m {
            col[r] = rhs.get(r, t);
        }
        let sol = solver.solve(&col);
        intercept[t] = sol[0];
        for p in 0..dx {
            slope.set(t, p, sol[p + 1]);
        }
    }
    Some((intercept, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;

    #[test]
    fn cholesky_solves_spd_system() {
        // A = B^T B + I with a fixed small B.
        let b = Matrix::from_rows(&[&[1.0, 2.0, 0.5], &[0.0, 1.0, -1.0]]);
        let mut a = b.matmul_tn(&b).unwrap();
        for i in 0..3 {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        let rhs = [1.0, -2.0, 3.0];
        let solver = SpdSolver::new(a.clone()).unwrap();
        let x = solver.solve(&rhs);
        for i in 0..3 {
            let got = dot(a.row(i), &x);
            assert!((got - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(SpdSolver::new(a).is_none());
    }

    #[test]
    fn affine_fit_recovers_exact_affine_data() {
        let xs = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        // y = 2 + 3x0 - x1
        let ys = Matrix::from_rows(&[&[2.0], &[5.0], &[1.0], &[4.0]]);
        let w = [1.0, 1.0, 1.0, 1.0];
        let (b, slope) = weighted_affine_fit(&xs, &ys, &w, 0.0).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-10);
        assert!((slope.get(0, 0) - 3.0).abs() < 1e-10);
        assert!((slope.get(0, 1) + 1.0).abs() < 1e-10);
    }
}
