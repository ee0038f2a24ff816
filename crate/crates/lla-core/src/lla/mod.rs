//! The local linear attention estimator.
//!
//! The output row `O[i]` is the optimal intercept of the kernel-weighted,
//! query-centered local linear regression over the visible key/value pairs:
//! with `z_ij = k_j - q_i`, `rho_i = Sigma_i^{-1} mu_i` and
//! `delta_i = omega_i - mu_i.rho_i`,
//!
//! `O[i] = sum_j s_ij v_j`, `s_ij = w_ij (1 - z_ij.rho_i) / delta_i`.
//!
//! The `s_ij` are affine weights: they sum to 1 per row but may be negative.
//!
//! Three forward paths are provided. [`lla_forward_naive`] materializes the
//! full weight matrix and the pairwise differences and solves each
//! `Sigma_i` densely (the quadratic-memory reference). `blockwise`
//! ([`lla_forward_blockwise`]) is the linear-memory three-pass evaluation
//! with online max stabilization and batched CG. [`lla_forward_interpolated`]
//! is the residual form around an externally supplied slope.
//! [`lla_backward`] is the analytic gradient of the blockwise computation,
//! verified against finite differences.

mod backward;
mod blockwise;
mod single_precision;

pub use backward::lla_backward;
pub use blockwise::lla_forward_blockwise;
pub use single_precision::lla_forward_blockwise_f32;

use alloc::vec;
use alloc::vec::Vec;

use crate::cg::{CgReport, Lambda, RowStatus, WStripe};
use crate::kernel::{row_sq_norms, CenteredStats, LogitKind};
use crate::linalg::SpdSolver;
use crate::math;
use crate::tensor::{axpy, dot, Matrix, Vector};
use crate::{Error, Result};

/// Rows with `|delta_i|` below this are reported as degenerate rather than
/// silently clamped.
pub const DELTA_FLOOR: f64 = 1e-12;

/// Where the ridge lives relative to the running-max weight shift.
///
/// Weights are always stabilized as `w~_ij = exp(logit_ij - m_i)`. The
/// solved system is `(sum_j w~ z z^T + lambda_row I) rho = sum_j w~ z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaScale {
    /// `lambda_row = lambda`: the ridge regularizes the shifted system.
    /// Output is exactly invariant to per-row logit shifts (the shift moves
    /// `m_i` and cancels); the effective ridge on the unshifted system is
    /// `lambda * exp(m_i)`.
    #[default]
    Shifted,
    /// `lambda_row = lambda * exp(-m_i)`: the solved system is exactly the
    /// unshifted one, matching the plain weighted-least-squares objective
    /// with ridge `lambda`. Output then depends on the weight scale, and
    /// very large positive logits can underflow the compensated ridge.
    Strict,
}

/// Conjugate gradient controls for the attention paths (the ridge itself is
/// [`LLAConfig::lambda`]).
#[derive(Debug, Clone)]
pub struct CgParams {
    pub max_iters: usize,
    pub tol: f64,
}

/// Full configuration for the LLA forward/backward paths.
#[derive(Debug, Clone)]
pub struct LLAConfig {
    /// Kernel bandwidth; defaults to `2 sqrt(d)` so inner-product logits
    /// match softmax logits `q.k/sqrt(d)` under QK normalization.
    pub h: f64,
    pub lambda: Lambda,
    pub cg: CgParams,
    pub block_rows: usize,
    pub block_cols: usize,
    pub causal: bool,
    pub lambda_scale: LambdaScale,
    pub logits: LogitKind,
}

impl LLAConfig {
    pub fn new(d: usize) -> Self {
        LLAConfig {
            h: 2.0 * math::sqrt(d as f64),
            lambda: Lambda::Scalar(1.0),
            cg: CgParams {
                max_iters: d.min(32).max(1),
                tol: 1e-6,
            },
            block_rows: 64,
            block_cols: 64,
            causal: true,
            lambda_scale: LambdaScale::Shifted,
            logits: LogitKind::InnerProduct,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Lambda::Scalar(lambda);
        self
    }

    pub fn with_bandwidth(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    fn validate(&self, n: usize, strictly_positive_lambda: bool) -> Result<()> {
        if self.h <= 0.0 {
            return Err(Error::InvalidBandwidth(self.h));
        }
        if self.block_rows == 0 || self.block_cols == 0 {
            return Err(Error::InvalidConfig("block sizes must be >= 1"));
        }
        if self.cg.max_iters == 0 {
            return Err(Error::InvalidConfig("cg.max_iters must be >= 1"));
        }
        if !(self.cg.tol > 0.0) {
            return Err(Error::InvalidConfig("cg.tol must be > 0"));
        }
        self.lambda.validate(n, strictly_positive_lambda)
    }
}

/// Everything the backward pass needs from a forward pass, at the shifted
/// weight scale: `r` holds the rows `rho_i = Sigma_i^{-1} mu_i`, `delta`
/// the Schur denominators, `stats` the first-order statistics together
/// with the running max and its argmax, and `lambda_rows` the per-row ridge
/// actually applied in the shifted frame. The `n x n` weight matrix is not
/// stored; backward recomputes it blockwise from `q`, `k` and the cached
/// running max.
#[derive(Debug, Clone)]
pub struct LLAForwardCache {
    pub r: Matrix,
    pub delta: Vector,
    pub stats: CenteredStats,
    pub lambda_rows: Vector,
    /// Per-row CG outcome (dense rows report `Converged(0)`).
    pub cg: Vec<RowStatus>,
}

impl LLAForwardCache {
    pub fn cg_all_converged(&self) -> bool {
        self.cg.iter().all(RowStatus::is_converged)
    }
}

/// Gradients of a scalar loss with respect to the three inputs.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
}

pub(crate) fn resolve_lambda_rows(
    lambda: &Lambda,
    run_max: &[f64],
    scale: LambdaScale,
) -> Vec<f64> {
    run_max
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let base = lambda.get(i);
            match scale {
                LambdaScale::Shifted => base,
                LambdaScale::Strict => {
                    if m.is_finite() {
                        base * math::exp(-m)
                    } else {
                        base
                    }
                }
            }
        })
        .collect()
}

fn check_same_rows(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != q.cols() {
        return Err(Error::ShapeMismatch {
            expected: (q.rows(), q.cols()),
            got: (k.rows(), k.cols()),
            what: "lla forward inputs",
        });
    }
    Ok(())
}

/// Stabilized weight stripe for query rows `row0..row0+b`: row `r` holds
/// `exp(logit - run_max[r])` over its visible keys.
pub(crate) fn build_stripe(
    q_blk: &Matrix,
    row0: usize,
    k: &Matrix,
    k_sq: &[f64],
    q_sq: &[f64],
    h: f64,
    kind: LogitKind,
    run_max: &[f64],
    causal: bool,
) -> WStripe {
    let b = q_blk.rows();
    let mut stripe = WStripe::new(b);
    for r in 0..b {
        let len = if causal {
            (row0 + r + 1).min(k.rows())
        } else {
            k.rows()
        };
        let m = run_max[r];
        let qr = q_blk.row(r);
        let row = stripe.row_mut(r);
        row.clear();
        row.reserve(len);
        for j in 0..len {
            let l = kind.logit(qr, k.row(j), h, q_sq[r], k_sq[j]);
            row.push(math::exp(l - m));
        }
    }
    stripe
}

/// Dense reference forward: materializes the pairwise differences
/// (`Theta(n^2 d)` working memory) and the full weight matrix, and inverts
/// each `Sigma_i` with a Cholesky factorization.
pub fn lla_forward_naive(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &LLAConfig,
) -> Result<(Matrix, LLAForwardCache)> {
    check_same_rows(q, k, v)?;
    let n = q.rows();
    let d = q.cols();
    cfg.validate(n, false)?;

    let q_sq = row_sq_norms(q);
    let k_sq = row_sq_norms(k);

    // Stabilized weights with per-row max; full n x n matrix.
    let mut w = Matrix::zeros(n, n);
    let mut run_max = vec![f64::NEG_INFINITY; n];
    let mut run_argmax = vec![usize::MAX; n];
    for i in 0..n {
        let len = if cfg.causal { i + 1 } else { n };
        let qi = q.row(i);
        let wrow = w.row_mut(i);
        for (j, slot) in wrow.iter_mut().enumerate().take(len) {
            let l = cfg.logits.logit(qi, k.row(j), cfg.h, q_sq[i], k_sq[j]);
            *slot = l;
            if l > run_max[i] {
                run_max[i] = l;
                run_argmax[i] = j;
            }
        }
        let m = run_max[i];
        for slot in wrow.iter_mut().take(len) {
            *slot = math::exp(*slot - m);
        }
    }

    // Pairwise differences, materialized in full (the reference formulation
    // this path exists to check): row-major blocks z_ij = k_j - q_i.
    let pair_rows: usize = if cfg.causal { n * (n + 1) / 2 } else { n * n };
    let mut z = vec![0.0; pair_rows * d];
    let mut z_off = vec![0usize; n];
    {
        let mut off = 0;
        for i in 0..n {
            z_off[i] = off;
            let len = if cfg.causal { i + 1 } else { n };
            let qi = q.row(i);
            for j in 0..len {
                let dst = &mut z[(off + j) * d..(off + j + 1) * d];
                for (c, slot) in dst.iter_mut().enumerate() {
                    *slot = k.get(j, c) - qi[c];
                }
            }
            off += len;
        }
    }

    // First-order statistics at the shifted scale.
    let mut omega = vec![0.0; n];
    let mut mu = Matrix::zeros(n, d);
    for i in 0..n {
        let len = if cfg.causal { i + 1 } else { n };
        let off = z_off[i];
        for j in 0..len {
            let wij = w.get(i, j);
            omega[i] += wij;
            axpy(wij, &z[(off + j) * d..(off + j + 1) * d], mu.row_mut(i));
        }
    }
    let mut mu_tilde = mu.clone();
    for i in 0..n {
        axpy(omega[i], q.row(i), mu_tilde.row_mut(i));
    }

    let lambda_rows = resolve_lambda_rows(&cfg.lambda, &run_max, cfg.lambda_scale);

    // Per-row dense solve and output.
    let dv = v.cols();
    let mut out = Matrix::zeros(n, dv);
    let mut rho = Matrix::zeros(n, d);
    let mut delta = vec![0.0; n];
    let mut sigma = Matrix::zeros(d, d);
    for i in 0..n {
        let len = if cfg.causal { i + 1 } else { n };
        let off = z_off[i];
        sigma.data_mut().fill(0.0);
        for j in 0..len {
            let wij = w.get(i, j);
            if wij == 0.0 {
                continue;
            }
            let zj = &z[(off + j) * d..(off + j + 1) * d];
            for a in 0..d {
                let wza = wij * zj[a];
                let row = sigma.row_mut(a);
                for b in a..d {
                    row[b] += wza * zj[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                let t = sigma.get(b, a);
                sigma.set(a, b, t);
            }
            sigma.set(a, a, sigma.get(a, a) + lambda_rows[i]);
        }
        let solver = SpdSolver::new(sigma.clone()).ok_or(Error::SingularSystem { row: i })?;
        let rho_i = solver.solve(mu.row(i));
        delta[i] = omega[i] - dot(mu.row(i), &rho_i);
        if math::abs(delta[i]) < DELTA_FLOOR {
            return Err(Error::DegenerateDenominator {
                row: i,
                delta: delta[i],
            });
        }
        for j in 0..len {
            let wij = w.get(i, j);
            if wij == 0.0 {
                continue;
            }
            let zj = &z[(off + j) * d..(off + j + 1) * d];
            let s = wij * (1.0 - dot(zj, &rho_i)) / delta[i];
            axpy(s, v.row(j), out.row_mut(i));
        }
        rho.row_mut(i).copy_from_slice(&rho_i);
    }

    let stats = CenteredStats {
        omega,
        mu_tilde,
        mu,
        run_max,
        run_argmax,
    };
    Ok((
        out,
        LLAForwardCache {
            r: rho,
            delta,
            stats,
            lambda_rows,
            cg: vec![RowStatus::Converged(0); n],
        },
    ))
}

/// Residual-form forward around an external slope:
/// `O[i] = sum_j s_ij (v_j - What_i k_j) + What_i q_i` with the local
/// constant weights `s_ij = w_ij / omega_i`.
///
/// `w_hat` is called once per row in increasing order and must return a
/// `v.cols() x k.cols()` slope for that position. With a zero slope this is
/// exactly softmax attention; with the optimal local slope it reproduces
/// [`lla_forward_naive`]. Rows with empty context fall back to the pure
/// linear prediction `What_i q_i`.
pub fn lla_forward_interpolated<F>(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mut w_hat: F,
    cfg: &LLAConfig,
) -> Result<Matrix>
where
    F: FnMut(usize) -> Matrix,
{
    check_same_rows(q, k, v)?;
    let n = q.rows();
    let d = q.cols();
    let dv = v.cols();
    cfg.validate(n, false)?;

    let q_sq = row_sq_norms(q);
    let k_sq = row_sq_norms(k);
    let mut out = Matrix::zeros(n, dv);
    let mut sv = vec![0.0; dv];
    let mut sk = vec![0.0; d];
    let mut what_x = vec![0.0; dv];
    for i in 0..n {
        let len = if cfg.causal { i + 1 } else { n };
        let qi = q.row(i);
        let what = w_hat(i);
        if what.rows() != dv || what.cols() != d {
            return Err(Error::ShapeMismatch {
                expected: (dv, d),
                got: (what.rows(), what.cols()),
                what: "lla_forward_interpolated slope",
            });
        }
        let mut m = f64::NEG_INFINITY;
        for j in 0..len {
            m = m.max(cfg.logits.logit(qi, k.row(j), cfg.h, q_sq[i], k_sq[j]));
        }
        let orow = out.row_mut(i);
        if m == f64::NEG_INFINITY {
            // Empty context: linear part only.
            mat_vec(&what, qi, orow);
            continue;
        }
        sv.fill(0.0);
        sk.fill(0.0);
        let mut sw = 0.0;
        for j in 0..len {
            let w = math::exp(cfg.logits.logit(qi, k.row(j), cfg.h, q_sq[i], k_sq[j]) - m);
            sw += w;
            axpy(w, v.row(j), &mut sv);
            axpy(w, k.row(j), &mut sk);
        }
        for s in sk.iter_mut() {
            *s /= sw;
        }
        // O = sum s v - What (sum s k - q)
        for (s, &qv) in sk.iter_mut().zip(qi) {
            *s -= qv;
        }
        mat_vec(&what, &sk, &mut what_x);
        for ((o, &s), &wx) in orow.iter_mut().zip(&sv).zip(&what_x) {
            *o = s / sw - wx;
        }
    }
    Ok(out)
}

/// Slope source for the interpolated form built from the vanilla linear
/// attention state `S_i = sum_{j<=i} v_j k_j^T`.
pub fn la_slope_source<'a>(k: &'a Matrix, v: &'a Matrix) -> impl FnMut(usize) -> Matrix + 'a {
    let mut state = Matrix::zeros(v.cols(), k.cols());
    let mut next = 0usize;
    move |i: usize| {
        while next <= i {
            for a in 0..v.cols() {
                let va = v.get(next, a);
                axpy(va, k.row(next), state.row_mut(a));
            }
            next += 1;
        }
        state.clone()
    }
}

#[inline]
fn mat_vec(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(a), x);
    }
}

pub(crate) fn merged_report(status: Vec<RowStatus>) -> CgReport {
    CgReport {
        status,
        residuals: None,
    }
}
