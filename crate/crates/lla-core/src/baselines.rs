//! Reference estimators the LLA paths are compared against: softmax
//! (Nadaraya-Watson) attention, vanilla linear attention, MesaNet, and the
//! classical global-linear / local-linear regressors in estimator form.

use alloc::vec;

use crate::kernel::{row_sq_norms, LogitKind};
use crate::linalg::{weighted_affine_fit, SpdSolver};
use crate::math;
use crate::tensor::{axpy, dot, Matrix, Vector};
use crate::{Error, Result};

/// Running accumulators of the linear-attention family:
/// `S = sum_j v_j k_j^T` and `H = sum_j k_j k_j^T + lambda I`.
#[derive(Debug, Clone)]
pub struct RecurrentState {
    pub s: Matrix,
    pub h: Matrix,
}

impl RecurrentState {
    pub fn new(d: usize, dv: usize, lambda: f64) -> Self {
        let mut h = Matrix::zeros(d, d);
        for i in 0..d {
            h.set(i, i, lambda);
        }
        RecurrentState {
            s: Matrix::zeros(dv, d),
            h,
        }
    }

    /// Absorb one key/value pair.
    pub fn update(&mut self, k: &[f64], v: &[f64]) {
        for (a, &va) in v.iter().enumerate() {
            axpy(va, k, self.s.row_mut(a));
        }
        for (a, &ka) in k.iter().enumerate() {
            axpy(ka, k, self.h.row_mut(a));
        }
    }
}

/// Softmax attention / Nadaraya-Watson: per row, a convex combination of
/// values with weights `exp(q.k/h)` normalized to sum 1. Stabilized with the
/// row maximum; the normalization cancels the shift exactly.
pub fn softmax_attention(q: &Matrix, k: &Matrix, v: &Matrix, h: f64, causal: bool) -> Result<Matrix> {
    if h <= 0.0 {
        return Err(Error::InvalidBandwidth(h));
    }
    if k.rows() != v.rows() || q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            expected: (v.rows(), q.cols()),
            got: (k.rows(), k.cols()),
            what: "softmax_attention",
        });
    }
    let n = q.rows();
    let q_sq = row_sq_norms(q);
    let k_sq = row_sq_norms(k);
    let mut out = Matrix::zeros(n, v.cols());
    for i in 0..n {
        let len = if causal { (i + 1).min(k.rows()) } else { k.rows() };
        let qi = q.row(i);
        let mut m = f64::NEG_INFINITY;
        for j in 0..len {
            m = m.max(LogitKind::InnerProduct.logit(qi, k.row(j), h, q_sq[i], k_sq[j]));
        }
        if m == f64::NEG_INFINITY {
            continue;
        }
        let mut sw = 0.0;
        let orow = out.row_mut(i);
        for j in 0..len {
            let w = math::exp(LogitKind::InnerProduct.logit(qi, k.row(j), h, q_sq[i], k_sq[j]) - m);
            sw += w;
            axpy(w, v.row(j), orow);
        }
        for o in out.row_mut(i) {
            *o /= sw;
        }
    }
    Ok(out)
}

/// Vanilla linear attention: `O[i] = S_i q_i` with `S_i = sum_{j<=i} v_j
/// k_j^T` maintained recurrently (the identity-preconditioner shortcut).
pub fn vanilla_la(q: &Matrix, k: &Matrix, v: &Matrix, causal: bool) -> Result<Matrix> {
    if k.rows() != v.rows() || q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            expected: (v.rows(), q.cols()),
            got: (k.rows(), k.cols()),
            what: "vanilla_la",
        });
    }
    let n = q.rows();
    let dv = v.cols();
    let mut out = Matrix::zeros(n, dv);
    if causal {
        let mut state = Matrix::zeros(dv, q.cols());
        for i in 0..n {
            if i < k.rows() {
                for (a, &va) in v.row(i).iter().enumerate() {
                    axpy(va, k.row(i), state.row_mut(a));
                }
            }
            let qi = q.row(i);
            for (a, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = dot(state.row(a), qi);
            }
        }
    } else {
        let mut state = Matrix::zeros(dv, q.cols());
        for j in 0..k.rows() {
            for (a, &va) in v.row(j).iter().enumerate() {
                axpy(va, k.row(j), state.row_mut(a));
            }
        }
        for i in 0..n {
            let qi = q.row(i);
            for (a, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = dot(state.row(a), qi);
            }
        }
    }
    Ok(out)
}

/// MesaNet: the exact ridge-regression prediction
/// `O[i] = S_i (H_i)^{-1} q_i` with query-independent statistics, solved
/// densely per position (the closed-form baseline, not the streaming CG
/// variant).
pub fn mesanet(q: &Matrix, k: &Matrix, v: &Matrix, lambda: f64, causal: bool) -> Result<Matrix> {
    if lambda <= 0.0 {
        return Err(Error::InvalidLambda {
            row: 0,
            value: lambda,
        });
    }
    if k.rows() != v.rows() || q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            expected: (v.rows(), q.cols()),
            got: (k.rows(), k.cols()),
            what: "mesanet",
        });
    }
    let n = q.rows();
    let d = q.cols();
    let dv = v.cols();
    let mut out = Matrix::zeros(n, dv);
    let mut state = RecurrentState::new(d, dv, lambda);
    if causal {
        for i in 0..n {
            if i < k.rows() {
                state.update(k.row(i), v.row(i));
            }
            let solver =
                SpdSolver::new(state.h.clone()).ok_or(Error::SingularSystem { row: i })?;
            let hq = solver.solve(q.row(i));
            for (a, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = dot(state.s.row(a), &hq);
            }
        }
    } else {
        for j in 0..k.rows() {
            state.update(k.row(j), v.row(j));
        }
        let solver = SpdSolver::new(state.h.clone()).ok_or(Error::SingularSystem { row: 0 })?;
        for i in 0..n {
            let hq = solver.solve(q.row(i));
            for (a, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = dot(state.s.row(a), &hq);
            }
        }
    }
    Ok(out)
}

/// Associative-recall mean squared error of vanilla linear attention at the
/// final position: `(1/n) sum_j ||S_n k_j - v_j||^2`. Zero iff the final
/// state retrieves every stored pair exactly.
pub fn la_recall_mse(k: &Matrix, v: &Matrix) -> Result<f64> {
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch {
            expected: (k.rows(), v.cols()),
            got: (v.rows(), v.cols()),
            what: "la_recall_mse",
        });
    }
    let n = k.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let dv = v.cols();
    let mut state = Matrix::zeros(dv, k.cols());
    for j in 0..n {
        for (a, &va) in v.row(j).iter().enumerate() {
            axpy(va, k.row(j), state.row_mut(a));
        }
    }
    let mut total = 0.0;
    for j in 0..n {
        for a in 0..dv {
            let pred = dot(state.row(a), k.row(j));
            let e = pred - v.get(j, a);
            total += e * e;
        }
    }
    Ok(total / n as f64)
}

/// Affine least-squares predictor `y ~ b + W x`.
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    pub intercept: Vector,
    pub slope: Matrix,
    /// Set when the plain normal equations were rank-deficient and a small
    /// ridge was applied instead.
    pub ridged: bool,
}

impl LinearPredictor {
    pub fn predict(&self, x: &[f64]) -> Vector {
        let mut out = self.intercept.clone();
        for (a, o) in out.iter_mut().enumerate() {
            *o += dot(self.slope.row(a), x);
        }
        out
    }
}

const RIDGE_FALLBACK: f64 = 1e-8;

/// Global affine least squares over all rows. A rank-deficient design falls
/// back to a small ridge and flags the predictor.
pub fn global_linear_fit(x: &Matrix, y: &Matrix) -> Result<LinearPredictor> {
    if x.rows() != y.rows() {
        return Err(Error::ShapeMismatch {
            expected: (x.rows(), y.cols()),
            got: (y.rows(), y.cols()),
            what: "global_linear_fit",
        });
    }
    let w = vec![1.0; x.rows()];
    if let Some((intercept, slope)) = weighted_affine_fit(x, y, &w, 0.0) {
        return Ok(LinearPredictor {
            intercept,
            slope,
            ridged: false,
        });
    }
    let (intercept, slope) =
        weighted_affine_fit(x, y, &w, RIDGE_FALLBACK).ok_or(Error::SingularSystem { row: 0 })?;
    Ok(LinearPredictor {
        intercept,
        slope,
        ridged: true,
    })
}

/// RBF weights `exp(-||x_i - x0||^2 / h)` against every row of `x`.
fn rbf_weights(x: &Matrix, x0: &[f64], h: f64) -> Vector {
    (0..x.rows())
        .map(|i| {
            let mut sq = 0.0;
            for (a, &x0a) in x0.iter().enumerate() {
                let dlt = x.get(i, a) - x0a;
                sq += dlt * dlt;
            }
            math::exp(-sq / h)
        })
        .collect()
}

/// Nadaraya-Watson estimate at `x0`: RBF-weighted average of `y` rows.
pub fn nw_estimate(x: &Matrix, y: &Matrix, x0: &[f64], h: f64) -> Result<Vector> {
    if h <= 0.0 {
        return Err(Error::InvalidBandwidth(h));
    }
    if x.rows() != y.rows() || x0.len() != x.cols() {
        return Err(Error::ShapeMismatch {
            expected: (x.rows(), x.cols()),
            got: (y.rows(), x0.len()),
            what: "nw_estimate",
        });
    }
    let w = rbf_weights(x, x0, h);
    let sw: f64 = w.iter().sum();
    let mut out = vec![0.0; y.cols()];
    if sw == 0.0 {
        return Ok(out);
    }
    for (i, &wi) in w.iter().enumerate() {
        axpy(wi / sw, y.row(i), &mut out);
    }
    Ok(out)
}

/// Local linear estimate at `x0`: weighted affine fit on design rows
/// `(1, x_i - x0)` with RBF weights and ridge on the slope block, evaluated
/// at its intercept. This is the estimator form of the LLA output row.
pub fn local_linear_estimate(
    x: &Matrix,
    y: &Matrix,
    x0: &[f64],
    h: f64,
    lambda: f64,
) -> Result<Vector> {
    if h <= 0.0 {
        return Err(Error::InvalidBandwidth(h));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidLambda {
            row: 0,
            value: lambda,
        });
    }
    if x.rows() != y.rows() || x0.len() != x.cols() {
        return Err(Error::ShapeMismatch {
            expected: (x.rows(), x.cols()),
            got: (y.rows(), x0.len()),
            what: "local_linear_estimate",
        });
    }
    let w = rbf_weights(x, x0, h);
    let mut centered = x.clone();
    for i in 0..centered.rows() {
        for (a, &x0a) in x0.iter().enumerate() {
            centered.set(i, a, centered.get(i, a) - x0a);
        }
    }
    let (intercept, _slope) =
        weighted_affine_fit(&centered, y, &w, lambda).ok_or(Error::SingularSystem { row: 0 })?;
    Ok(intercept)
}
