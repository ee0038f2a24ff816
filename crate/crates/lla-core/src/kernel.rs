//! Memory-efficient attention primitives: stabilized kernel weights with an
//! online running max, relative matrix multiplication, and centered
//! statistics accumulated block by block in Theta(n*d) working memory.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{axpy, dot, Matrix, Vector};
use crate::{Error, Result};

/// Which logit feeds the exponential kernel.
///
/// `InnerProduct` is the attention convention `q.k/h`. `NegSqDist` is the
/// classical RBF `-(||k-q||^2)/h`; the two agree up to per-row constants
/// exactly when keys are unit-normalized (see [`normalize_rows`]), and the
/// whole estimator is invariant to per-row constants, so `InnerProduct` is
/// the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitKind {
    #[default]
    InnerProduct,
    NegSqDist,
}

impl LogitKind {
    #[inline(always)]
    pub(crate) fn logit(self, q: &[f64], k: &[f64], h: f64, qn: f64, kn: f64) -> f64 {
        match self {
            LogitKind::InnerProduct => dot(q, k) / h,
            LogitKind::NegSqDist => (2.0 * dot(q, k) - qn - kn) / h,
        }
    }
}

/// Squared L2 norms of each row; used by the `NegSqDist` logit path.
pub(crate) fn row_sq_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| dot(m.row(i), m.row(i))).collect()
}

/// Rows rescaled to unit L2 norm (QK normalization). Zero rows stay zero.
pub fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = math::sqrt(dot(row, row));
        if n > 0.0 {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
    }
    out
}

/// Materialized kernel weight matrix `W[i,j] = exp(q_i.k_j/h - shift[i])`,
/// with zeros above the diagonal when `causal` is set. Without `shift` the
/// weights are unstabilized; passing the per-row logit maximum bounds every
/// entry by 1.
pub fn kernel_weights(
    q: &Matrix,
    k: &Matrix,
    h: f64,
    causal: bool,
    shift: Option<&[f64]>,
) -> Result<Matrix> {
    kernel_weights_kind(q, k, h, causal, shift, LogitKind::InnerProduct)
}

pub fn kernel_weights_kind(
    q: &Matrix,
    k: &Matrix,
    h: f64,
    causal: bool,
    shift: Option<&[f64]>,
    kind: LogitKind,
) -> Result<Matrix> {
    if h <= 0.0 {
        return Err(Error::InvalidBandwidth(h));
    }
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            expected: (k.rows(), q.cols()),
            got: (k.rows(), k.cols()),
            what: "kernel_weights",
        });
    }
    if let Some(s) = shift {
        if s.len() != q.rows() {
            return Err(Error::ShapeMismatch {
                expected: (q.rows(), 1),
                got: (s.len(), 1),
                what: "kernel_weights shift",
            });
        }
    }
    let qn = row_sq_norms(q);
    let kn = row_sq_norms(k);
    let mut w = Matrix::zeros(q.rows(), k.rows());
    for i in 0..q.rows() {
        let qi = q.row(i);
        let si = shift.map_or(0.0, |s| s[i]);
        let jmax = if causal { (i + 1).min(k.rows()) } else { k.rows() };
        let row = w.row_mut(i);
        for (j, out) in row.iter_mut().enumerate().take(jmax) {
            *out = math::exp(kind.logit(qi, k.row(j), h, qn[i], kn[j]) - si);
        }
    }
    Ok(w)
}

/// Relative matrix multiplication:
/// `relmm(X,Q,K)[i,j] = x_i.(k_j - q_i) = X K^T - brsum(X .* Q)`,
/// computed without materializing the pairwise differences.
pub fn relmm(x: &Matrix, q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if x.rows() != q.rows() || x.cols() != q.cols() {
        return Err(Error::ShapeMismatch {
            expected: (x.rows(), x.cols()),
            got: (q.rows(), q.cols()),
            what: "relmm X/Q",
        });
    }
    if x.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            expected: (k.rows(), x.cols()),
            got: (k.rows(), k.cols()),
            what: "relmm X/K",
        });
    }
    let mut out = x.matmul_nt(k)?;
    for i in 0..out.rows() {
        let self_term = dot(x.row(i), q.row(i));
        for v in out.row_mut(i).iter_mut() {
            *v -= self_term;
        }
    }
    Ok(out)
}

/// Query-specific first-order statistics at the running-max weight scale.
///
/// For each query row `i`, with stabilized weights
/// `w~_ij = exp(logit_ij - run_max[i])`:
///
/// - `omega[i] = sum_j w~_ij`
/// - `mu_tilde[i] = sum_j w~_ij k_j`
/// - `mu[i] = mu_tilde[i] - omega[i] q_i` (the centered first moment)
///
/// The second moment is never materialized; it lives implicitly in
/// [`crate::cg::sigma_matvec`]. `run_argmax` records which key attained the
/// row maximum (the backward pass routes the running-max gradient there).
#[derive(Debug, Clone)]
pub struct CenteredStats {
    pub omega: Vector,
    pub mu_tilde: Matrix,
    pub mu: Matrix,
    pub run_max: Vector,
    pub run_argmax: Vec<usize>,
}

impl CenteredStats {
    /// A row is degenerate when it never saw a finite logit (empty context).
    pub fn is_degenerate(&self, i: usize) -> bool {
        self.run_max[i] == f64::NEG_INFINITY
    }

    pub fn rows(&self) -> usize {
        self.omega.len()
    }
}

/// Streaming accumulator behind [`accumulate_stats`]; also driven directly
/// by the blockwise forward, which supplies key blocks as row slices with a
/// global column offset.
pub(crate) struct StatsAccumulator<'a> {
    q: &'a Matrix,
    q_sq: Vec<f64>,
    row0: usize,
    h: f64,
    causal: bool,
    kind: LogitKind,
    omega: Vec<f64>,
    mu_tilde: Matrix,
    run_max: Vec<f64>,
    run_argmax: Vec<usize>,
    logits: Vec<f64>,
}

impl<'a> StatsAccumulator<'a> {
    /// `row0` is the global sequence index of `q`'s first row; causal
    /// masking compares global key indices against it.
    pub fn new(q: &'a Matrix, row0: usize, h: f64, causal: bool, kind: LogitKind) -> Self {
        let b = q.rows();
        StatsAccumulator {
            q_sq: row_sq_norms(q),
            q,
            row0,
            h,
            causal,
            kind,
            omega: vec![0.0; b],
            mu_tilde: Matrix::zeros(b, q.cols()),
            run_max: vec![f64::NEG_INFINITY; b],
            run_argmax: vec![usize::MAX; b],
            logits: Vec::new(),
        }
    }

    /// Absorb one key block whose first row has global index `col0`.
    pub fn absorb(&mut self, k_block: &Matrix, col0: usize, k_sq: &[f64]) {
        self.absorb_inner(k_block, 0, k_block.rows(), col0, k_sq, None);
    }

    /// Absorb rows `start..end` of the full key matrix, optionally recording
    /// each visible raw logit into `stripe` (rows grow in key order, so
    /// after all blocks the stripe covers each row's causal prefix).
    pub(crate) fn absorb_range(
        &mut self,
        k: &Matrix,
        start: usize,
        end: usize,
        k_sq: &[f64],
        stripe: Option<&mut crate::cg::WStripe>,
    ) {
        self.absorb_inner(k, start, end, start, k_sq, stripe);
    }

    fn absorb_inner(
        &mut self,
        k: &Matrix,
        start: usize,
        end: usize,
        col0: usize,
        k_sq: &[f64],
        mut stripe: Option<&mut crate::cg::WStripe>,
    ) {
        let bc = end - start;
        self.logits.resize(bc, 0.0);
        for r in 0..self.q.rows() {
            let i = self.row0 + r;
            let jmax = if self.causal {
                if col0 > i {
                    continue;
                }
                (i - col0 + 1).min(bc)
            } else {
                bc
            };
            if jmax == 0 {
                continue;
            }
            let qi = self.q.row(r);
            let mut block_max = f64::NEG_INFINITY;
            let mut block_arg = 0;
            for j in 0..jmax {
                let l = self
                    .kind
                    .logit(qi, k.row(start + j), self.h, self.q_sq[r], k_sq[start + j]);
                self.logits[j] = l;
                if l > block_max {
                    block_max = l;
                    block_arg = j;
                }
            }
            if let Some(s) = stripe.as_deref_mut() {
                s.row_mut(r).extend_from_slice(&self.logits[..jmax]);
            }
            let m_old = self.run_max[r];
            let m_new = m_old.max(block_max);
            if block_max > m_old {
                self.run_argmax[r] = col0 + block_arg;
            }
            // Rescale previously accumulated mass to the new max. exp of a
            // finite difference is fine, but -inf minus -inf is NaN, so a
            // fresh row skips the rescale.
            if m_old > f64::NEG_INFINITY && m_new > m_old {
                let alpha = math::exp(m_old - m_new);
                self.omega[r] *= alpha;
                for v in self.mu_tilde.row_mut(r).iter_mut() {
                    *v *= alpha;
                }
            }
            self.run_max[r] = m_new;
            for j in 0..jmax {
                let w = math::exp(self.logits[j] - m_new);
                self.omega[r] += w;
                axpy(w, k.row(start + j), self.mu_tilde.row_mut(r));
            }
        }
    }

    pub fn finish(self) -> CenteredStats {
        let mut mu = self.mu_tilde.clone();
        for r in 0..self.q.rows() {
            let qi = self.q.row(r);
            let w = self.omega[r];
            for (m, &qv) in mu.row_mut(r).iter_mut().zip(qi) {
                *m -= w * qv;
            }
        }
        CenteredStats {
            omega: self.omega,
            mu_tilde: self.mu_tilde,
            mu,
            run_max: self.run_max,
            run_argmax: self.run_argmax,
        }
    }
}

/// Accumulate the query-specific statistics over a sequence of key blocks
/// (laid out contiguously) with online max stabilization. With `causal`,
/// keys at global index greater than the query row are masked. An empty
/// block sequence yields degenerate rows with `omega = 0`.
pub fn accumulate_stats(
    q: &Matrix,
    k_blocks: &[&Matrix],
    h: f64,
    causal: bool,
) -> Result<CenteredStats> {
    accumulate_stats_kind(q, k_blocks, h, causal, LogitKind::InnerProduct)
}

pub fn accumulate_stats_kind(
    q: &Matrix,
    k_blocks: &[&Matrix],
    h: f64,
    causal: bool,
    kind: LogitKind,
) -> Result<CenteredStats> {
    if h <= 0.0 {
        return Err(Error::InvalidBandwidth(h));
    }
    for k in k_blocks {
        if k.cols() != q.cols() {
            return Err(Error::ShapeMismatch {
                expected: (k.rows(), q.cols()),
                got: (k.rows(), k.cols()),
                what: "accumulate_stats",
            });
        }
    }
    let mut acc = StatsAccumulator::new(q, 0, h, causal, kind);
    let mut col0 = 0;
    for k in k_blocks {
        let k_sq = row_sq_norms(k);
        acc.absorb(k, col0, &k_sq);
        col0 += k.rows();
    }
    Ok(acc.finish())
}
