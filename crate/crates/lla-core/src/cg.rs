//! Batched matrix-free conjugate gradient for the per-query systems
//! `Sigma_i x_i = y_i`, where
//! `Sigma_i = sum_j w_ij z_ij z_ij^T + lambda_i I` and `z_ij = k_j - q_i`.
//!
//! `Sigma_i` is never materialized: the matvec (one streaming pass over the
//! keys per row)
//!
//! `Sigma_i p = sum_j w_ij (k_j.p) k_j - (q_i.p) mu~_i - (mu~_i.p) q_i
//!              + (omega_i q_i.p) q_i + lambda_i p`
//!
//! needs only the keys, the query, and the first-order statistics. Rows are
//! independent systems; an active mask freezes converged rows so later
//! iterations leave them bit-identical.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::{row_sq_norms, CenteredStats, LogitKind};
use crate::tensor::{axpy, dot, norm2, Matrix, Vector};
use crate::{Error, Result};

/// Per-row ridge, scalar or one value per query row.
#[derive(Debug, Clone)]
pub enum Lambda {
    Scalar(f64),
    PerRow(Vector),
}

impl Lambda {
    #[inline(always)]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Lambda::Scalar(v) => *v,
            Lambda::PerRow(v) => v[i],
        }
    }

    /// Check sign and, for the per-row form, length.
    pub fn validate(&self, rows: usize, strictly_positive: bool) -> Result<()> {
        let check = |i: usize, v: f64| {
            if v < 0.0 || (strictly_positive && v == 0.0) || !v.is_finite() {
                Err(Error::InvalidLambda { row: i, value: v })
            } else {
                Ok(())
            }
        };
        match self {
            Lambda::Scalar(v) => check(0, *v),
            Lambda::PerRow(vs) => {
                if vs.len() != rows {
                    return Err(Error::ShapeMismatch {
                        expected: (rows, 1),
                        got: (vs.len(), 1),
                        what: "per-row lambda",
                    });
                }
                for (i, &v) in vs.iter().enumerate() {
                    check(i, v)?;
                }
                Ok(())
            }
        }
    }
}

/// Solver controls. `tol` is relative: a row is converged once
/// `||r|| <= tol * max(1, ||y||)`.
#[derive(Debug, Clone)]
pub struct CGConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub lambda: Lambda,
    /// Record `||r||` per row per iteration in the report (testing aid).
    pub record_residuals: bool,
}

impl CGConfig {
    /// Defaults for feature dimension `d`: `T = min(d, 32)`, `tol = 1e-6`.
    /// A constant number of iterations is enough in practice; `T = d` is
    /// exact in exact arithmetic.
    pub fn for_dim(d: usize, lambda: Lambda) -> Self {
        CGConfig {
            max_iters: d.min(32).max(1),
            tol: 1e-6,
            lambda,
            record_residuals: false,
        }
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be > 0"));
        }
        self.lambda.validate(rows, true)
    }
}

/// What happened to one row of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    /// Residual threshold met at the given iteration (0 = immediately).
    Converged(usize),
    /// Iteration budget exhausted; the iterate is still returned.
    MaxIters,
    /// Non-positive curvature `p.Sigma p <= 0`: the system is not SPD at
    /// working precision (lambda too small). Row frozen at its last iterate.
    Breakdown,
}

impl RowStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, RowStatus::Converged(_))
    }
}

/// Per-row outcome of a batched solve.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub status: Vec<RowStatus>,
    /// `residuals[i][t]` = `||r_i||` after `t` iterations (index 0 is the
    /// initial residual). Present only when requested.
    pub residuals: Option<Vec<Vec<f64>>>,
}

impl CgReport {
    pub fn all_converged(&self) -> bool {
        self.status.iter().all(RowStatus::is_converged)
    }

    pub fn any_breakdown(&self) -> bool {
        self.status.iter().any(|s| matches!(s, RowStatus::Breakdown))
    }
}

/// The implicit SPD system: queries, keys, and the stabilized statistics
/// they were accumulated with. The statistics must come from the same
/// `(q, keys, h, causal, kind)` tuple; both sides of the linear system then
/// share one weight scale, which is what makes the running-max shift safe.
pub struct SigmaSystem<'a> {
    pub q: &'a Matrix,
    pub keys: &'a [&'a Matrix],
    pub stats: &'a CenteredStats,
    pub h: f64,
    pub causal: bool,
    pub kind: LogitKind,
}

impl<'a> SigmaSystem<'a> {
    fn validate(&self) -> Result<()> {
        if self.h <= 0.0 {
            return Err(Error::InvalidBandwidth(self.h));
        }
        if self.stats.rows() != self.q.rows()
            || self.stats.mu_tilde.rows() != self.q.rows()
            || self.stats.mu_tilde.cols() != self.q.cols()
        {
            return Err(Error::InconsistentStats("stats shape does not match queries"));
        }
        for k in self.keys {
            if k.cols() != self.q.cols() {
                return Err(Error::InconsistentStats("key block dimension mismatch"));
            }
        }
        Ok(())
    }
}

/// Ragged per-row cache of stabilized weights for a block of query rows.
/// Row `r` covers keys `0..len(r)` (its causal prefix).
pub(crate) struct WStripe {
    rows: Vec<Vec<f64>>,
}

impl WStripe {
    pub fn new(rows: usize) -> Self {
        WStripe {
            rows: vec![Vec::new(); rows],
        }
    }

    pub fn row_mut(&mut self, r: usize) -> &mut Vec<f64> {
        &mut self.rows[r]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r]
    }
}

/// Shared matvec core. `q` holds the (block of) query rows being solved,
/// `row0` their global offset for causal masking; `k`/`k_sq` the full key
/// matrix with precomputed squared norms; per-row statistics are slices
/// aligned with `q`'s rows. When a weight stripe is supplied the stabilized
/// weights are read from it, otherwise they are recomputed from logits and
/// `run_max`.
pub(crate) struct SigmaCore<'a> {
    pub q: &'a Matrix,
    pub q_sq: &'a [f64],
    pub row0: usize,
    pub k: &'a Matrix,
    pub k_sq: &'a [f64],
    pub run_max: &'a [f64],
    pub h: f64,
    pub causal: bool,
    pub kind: LogitKind,
    pub stripe: Option<&'a WStripe>,
}

impl<'a> SigmaCore<'a> {
    /// Number of visible keys for local row `r`.
    #[inline(always)]
    pub fn key_count(&self, r: usize) -> usize {
        if self.causal {
            (self.row0 + r + 1).min(self.k.rows())
        } else {
            self.k.rows()
        }
    }

    /// Stabilized weights for local row `r` over its visible keys.
    fn weights_row<'b>(&'b self, r: usize, buf: &'b mut Vec<f64>) -> &'b [f64] {
        if let Some(s) = self.stripe {
            return s.row(r);
        }
        let len = self.key_count(r);
        let m = self.run_max[r];
        buf.clear();
        buf.reserve(len);
        let qr = self.q.row(r);
        for j in 0..len {
            let l = self.kind.logit(qr, self.k.row(j), self.h, self.q_sq[r], self.k_sq[j]);
            buf.push(crate::math::exp(l - m));
        }
        buf
    }

    /// `out = Sigma_r p` for one local row. The four tilded terms are
    /// regrouped around the centered scalar `z.p = k.p - q.p` per key:
    /// algebraically identical, but it avoids cancelling large uncentered
    /// aggregates, which costs CG several digits at `T = d`.
    pub fn matvec_row(&self, r: usize, p: &[f64], lambda_r: f64, out: &mut [f64], buf: &mut Vec<f64>) {
        let qr = self.q.row(r);
        out.fill(0.0);
        if !self.stats_degenerate(r) {
            let len = self.key_count(r);
            let w = self.weights_row(r, buf);
            let qp = dot(qr, p);
            let mut wzp_sum = 0.0;
            for j in 0..len {
                let kj = self.k.row(j);
                let wzp = w[j] * (dot(kj, p) - qp);
                axpy(wzp, kj, out);
                wzp_sum += wzp;
            }
            axpy(-wzp_sum, qr, out);
        }
        axpy(lambda_r, p, out);
    }

    #[inline(always)]
    fn stats_degenerate(&self, r: usize) -> bool {
        self.run_max[r] == f64::NEG_INFINITY
    }

    /// Batched matvec over the rows of `p`, restricted to `active` rows when
    /// a mask is given (inactive rows stay zero).
    pub fn matvec(&self, p: &Matrix, lambda: &Lambda, active: Option<&[bool]>) -> Matrix {
        let mut out = Matrix::zeros(p.rows(), p.cols());
        let mut buf = Vec::new();
        let mut tmp = vec![0.0; p.cols()];
        for r in 0..p.rows() {
            if let Some(mask) = active {
                if !mask[r] {
                    continue;
                }
            }
            self.matvec_row(r, p.row(r), lambda.get(r), &mut tmp, &mut buf);
            out.row_mut(r).copy_from_slice(&tmp);
        }
        out
    }

    /// Batched CG with active masking. Initial iterate is zero, so the
    /// initial residual is `y`.
    ///
    /// Two standard refinements on top of the textbook recurrence, both
    /// cheap next to the key-streaming matvec:
    ///
    /// - each new residual is re-orthogonalized against the stored residual
    ///   basis, which restores the exact-termination property (`T = d`
    ///   solves exactly) that plain CG loses to rounding;
    /// - the returned iterate per row is the smallest-residual iterate seen
    ///   (raw CG residual 2-norms are not monotone even in exact
    ///   arithmetic; the recorded history tracks the returned sequence, so
    ///   it is non-increasing by construction).
    pub fn solve(
        &self,
        y: &Matrix,
        max_iters: usize,
        tol: f64,
        lambda: &Lambda,
        record: bool,
    ) -> (Matrix, CgReport) {
        let n = y.rows();
        let d = y.cols();
        let mut x = Matrix::zeros(n, d);
        let mut x_best = Matrix::zeros(n, d);
        let mut res = y.clone();
        let mut p = y.clone();
        let mut sp = vec![0.0; d];
        let mut buf = Vec::new();
        // Normalized residual history per row, for re-orthogonalization.
        let mut basis: Vec<Vec<f64>> = vec![Vec::new(); n];

        let mut rs: Vec<f64> = (0..n).map(|i| dot(res.row(i), res.row(i))).collect();
        let mut rs_best = rs.clone();
        let thresh: Vec<f64> = (0..n)
            .map(|i| {
                let t = tol * norm2(y.row(i)).max(1.0);
                t * t
            })
            .collect();
        let mut status: Vec<Option<RowStatus>> = vec![None; n];
        let mut active: Vec<bool> = vec![true; n];
        let mut history: Option<Vec<Vec<f64>>> = if record {
            Some((0..n).map(|i| vec![crate::math::sqrt(rs_best[i])]).collect())
        } else {
            None
        };
        for i in 0..n {
            if rs[i] <= thresh[i] {
                status[i] = Some(RowStatus::Converged(0));
                active[i] = false;
            } else {
                let nrm = crate::math::sqrt(rs[i]);
                basis[i].extend(res.row(i).iter().map(|v| v / nrm));
            }
        }

        for t in 1..=max_iters {
            if !active.iter().any(|&a| a) {
                break;
            }
            for i in 0..n {
                if !active[i] {
                    if let Some(h) = history.as_mut() {
                        h[i].push(crate::math::sqrt(rs_best[i]));
                    }
                    continue;
                }
                self.matvec_row(i, p.row(i), lambda.get(i), &mut sp, &mut buf);
                let curv = dot(p.row(i), &sp);
                if curv <= 0.0 || !curv.is_finite() {
                    status[i] = Some(RowStatus::Breakdown);
                    active[i] = false;
                    if let Some(h) = history.as_mut() {
                        h[i].push(crate::math::sqrt(rs_best[i]));
                    }
                    continue;
                }
                let alpha = rs[i] / curv;
                axpy(alpha, p.row(i), x.row_mut(i));
                axpy(-alpha, &sp, res.row_mut(i));
                // Classical Gram-Schmidt against previous residuals, twice.
                for _ in 0..2 {
                    let rrow = res.row_mut(i);
                    for b in basis[i].chunks_exact(d) {
                        let proj = dot(rrow, b);
                        axpy(-proj, b, rrow);
                    }
                }
                let rs_new = dot(res.row(i), res.row(i));
                if rs_new < rs_best[i] {
                    rs_best[i] = rs_new;
                    x_best.row_mut(i).copy_from_slice(x.row(i));
                }
                if let Some(h) = history.as_mut() {
                    h[i].push(crate::math::sqrt(rs_best[i]));
                }
                if rs_best[i] <= thresh[i] {
                    status[i] = Some(RowStatus::Converged(t));
                    active[i] = false;
                } else {
                    let beta = rs_new / rs[i];
                    let prow = p.row_mut(i);
                    for (pv, &rv) in prow.iter_mut().zip(res.row(i)) {
                        *pv = rv + beta * *pv;
                    }
                    if t < max_iters && rs_new > 0.0 {
                        let nrm = crate::math::sqrt(rs_new);
                        let row = res.row(i);
                        basis[i].reserve(d);
                        basis[i].extend(row.iter().map(|v| v / nrm));
                    }
                }
                rs[i] = rs_new;
            }
        }

        let status = status
            .into_iter()
            .map(|s| s.unwrap_or(RowStatus::MaxIters))
            .collect();
        (
            x_best,
            CgReport {
                status,
                residuals: history,
            },
        )
    }

}

fn concat_keys(blocks: &[&Matrix], cols: usize) -> Matrix {
    let total: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut out = Matrix::zeros(total, cols);
    let mut r = 0;
    for b in blocks {
        for i in 0..b.rows() {
            out.row_mut(r).copy_from_slice(b.row(i));
            r += 1;
        }
    }
    out
}

/// Batched matvec `Sigma_i p_i` for every row of `p`, without materializing
/// any `Sigma_i`. Weights share the stats' running-max shift, so the same
/// shifted weights appear on both sides of any linear system built from
/// this operator.
pub fn sigma_matvec(sys: &SigmaSystem<'_>, p: &Matrix, lambda: &Lambda) -> Result<Matrix> {
    sys.validate()?;
    lambda.validate(p.rows(), false)?;
    if p.rows() != sys.q.rows() || p.cols() != sys.q.cols() {
        return Err(Error::ShapeMismatch {
            expected: (sys.q.rows(), sys.q.cols()),
            got: (p.rows(), p.cols()),
            what: "sigma_matvec",
        });
    }
    let k = concat_keys(sys.keys, sys.q.cols());
    let k_sq = row_sq_norms(&k);
    let q_sq = row_sq_norms(sys.q);
    let core = SigmaCore {
        q: sys.q,
        q_sq: &q_sq,
        row0: 0,
        k: &k,
        k_sq: &k_sq,
        run_max: &sys.stats.run_max,
        h: sys.h,
        causal: sys.causal,
        kind: sys.kind,
        stripe: None,
    };
    Ok(core.matvec(p, lambda, None))
}

/// Solve `Sigma_i x_i = y_i` for every row with batched CG.
///
/// Rows whose initial residual already meets the tolerance return
/// immediately as `Converged(0)`. Rows that hit non-positive curvature are
/// flagged `Breakdown` and frozen. `T = d` iterations solve exactly in
/// exact arithmetic; the default budget is `min(d, 32)`.
pub fn cg_solve(sys: &SigmaSystem<'_>, y: &Matrix, cfg: &CGConfig) -> Result<(Matrix, CgReport)> {
    sys.validate()?;
    cfg.validate(y.rows())?;
    if y.rows() != sys.q.rows() || y.cols() != sys.q.cols() {
        return Err(Error::ShapeMismatch {
            expected: (sys.q.rows(), sys.q.cols()),
            got: (y.rows(), y.cols()),
            what: "cg_solve rhs",
        });
    }
    if y.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("cg_solve rhs must be finite"));
    }
    let k = concat_keys(sys.keys, sys.q.cols());
    let k_sq = row_sq_norms(&k);
    let q_sq = row_sq_norms(sys.q);
    let core = SigmaCore {
        q: sys.q,
        q_sq: &q_sq,
        row0: 0,
        k: &k,
        k_sq: &k_sq,
        run_max: &sys.stats.run_max,
        h: sys.h,
        causal: sys.causal,
        kind: sys.kind,
        stripe: None,
    };
    Ok(core.solve(y, cfg.max_iters, cfg.tol, &cfg.lambda, cfg.record_residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::accumulate_stats;

    fn empty_stats(q: &Matrix) -> CenteredStats {
        accumulate_stats(q, &[], 1.0, false).unwrap()
    }

    #[test]
    fn matvec_identity_when_no_keys() {
        let q = Matrix::from_rows(&[&[1.0, 2.0], &[0.5, -0.5]]);
        let stats = empty_stats(&q);
        let sys = SigmaSystem {
            q: &q,
            keys: &[],
            stats: &stats,
            h: 1.0,
            causal: false,
            kind: LogitKind::InnerProduct,
        };
        let p = Matrix::from_rows(&[&[3.0, -1.0], &[2.0, 2.0]]);
        let out = sigma_matvec(&sys, &p, &Lambda::Scalar(1.0)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn matvec_scales_by_lambda_when_key_equals_query() {
        // z = 0 so the rank-one terms cancel and Sigma = lambda I.
        let q = Matrix::from_rows(&[&[0.7, -0.2, 1.1]]);
        let k = q.clone();
        let stats = accumulate_stats(&q, &[&k], 1.0, true).unwrap();
        let sys = SigmaSystem {
            q: &q,
            keys: &[&k],
            stats: &stats,
            h: 1.0,
            causal: true,
            kind: LogitKind::InnerProduct,
        };
        let p = Matrix::from_rows(&[&[1.0, 2.0, 3.0]]);
        let out = sigma_matvec(&sys, &p, &Lambda::Scalar(2.0)).unwrap();
        for j in 0..3 {
            assert!((out.get(0, j) - 2.0 * p.get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_identity_system() {
        let q = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let stats = empty_stats(&q);
        let sys = SigmaSystem {
            q: &q,
            keys: &[],
            stats: &stats,
            h: 1.0,
            causal: false,
            kind: LogitKind::InnerProduct,
        };
        let y = Matrix::from_rows(&[&[2.0, -4.0], &[1.0, 3.0]]);
        let cfg = CGConfig {
            max_iters: 4,
            tol: 1e-12,
            lambda: Lambda::Scalar(2.0),
            record_residuals: false,
        };
        let (x, report) = cg_solve(&sys, &y, &cfg).unwrap();
        assert!(report.all_converged());
        for i in 0..2 {
            for j in 0..2 {
                assert!((x.get(i, j) - y.get(i, j) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_rhs_converges_at_iteration_zero() {
        let q = Matrix::from_rows(&[&[1.0, 0.0]]);
        let k = Matrix::from_rows(&[&[0.5, 0.5]]);
        let stats = accumulate_stats(&q, &[&k], 1.0, true).unwrap();
        let sys = SigmaSystem {
            q: &q,
            keys: &[&k],
            stats: &stats,
            h: 1.0,
            causal: true,
            kind: LogitKind::InnerProduct,
        };
        let y = Matrix::zeros(1, 2);
        let cfg = CGConfig {
            max_iters: 8,
            tol: 1e-10,
            lambda: Lambda::Scalar(0.5),
            record_residuals: false,
        };
        let (x, report) = cg_solve(&sys, &y, &cfg).unwrap();
        assert_eq!(report.status[0], RowStatus::Converged(0));
        assert_eq!(x, Matrix::zeros(1, 2));
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let q = Matrix::from_rows(&[&[1.0, 0.0]]);
        let stats = empty_stats(&q);
        let sys = SigmaSystem {
            q: &q,
            keys: &[],
            stats: &stats,
            h: 1.0,
            causal: false,
            kind: LogitKind::InnerProduct,
        };
        let y = Matrix::zeros(1, 2);
        let cfg = CGConfig {
            max_iters: 4,
            tol: 1e-10,
            lambda: Lambda::Scalar(0.0),
            record_residuals: false,
        };
        assert!(cg_solve(&sys, &y, &cfg).is_err());
    }

    #[test]
    fn rejects_inconsistent_stats() {
        let q = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let q1 = Matrix::from_rows(&[&[1.0, 0.0]]);
        let stats = empty_stats(&q1);
        let sys = SigmaSystem {
            q: &q,
            keys: &[],
            stats: &stats,
            h: 1.0,
            causal: false,
            kind: LogitKind::InnerProduct,
        };
        let p = Matrix::zeros(2, 2);
        assert!(matches!(
            sigma_matvec(&sys, &p, &Lambda::Scalar(1.0)),
            Err(Error::InconsistentStats(_))
        ));
    }
}
