//! Three-pass blockwise forward with Theta(n*(B_r + d)) working memory:
//! per query block, (i) accumulate first-order statistics over key blocks
//! with an online running max while collecting the logit stripe, (ii) solve
//! the per-row systems with batched matrix-free CG reusing the stabilized
//! stripe, (iii) stream the keys/values once more to emit the output.

use alloc::vec;
use alloc::vec::Vec;

use crate::cg::{Lambda, RowStatus, SigmaCore};
use crate::kernel::{row_sq_norms, CenteredStats, StatsAccumulator};
use crate::math;
use crate::tensor::{axpy, dot, Matrix};
use crate::{Error, Result};

use super::{resolve_lambda_rows, LLAConfig, LLAForwardCache, DELTA_FLOOR};

pub fn lla_forward_blockwise(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &LLAConfig,
) -> Result<(Matrix, LLAForwardCache)> {
    if k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != q.cols() {
        return Err(Error::ShapeMismatch {
            expected: (q.rows(), q.cols()),
            got: (k.rows(), k.cols()),
            what: "lla forward inputs",
        });
    }
    let n = q.rows();
    let d = q.cols();
    let dv = v.cols();
    cfg.validate(n, true)?;

    let k_sq = row_sq_norms(k);
    let mut out = Matrix::zeros(n, dv);
    let mut rho_all = Matrix::zeros(n, d);
    let mut delta_all = vec![0.0; n];
    let mut omega_all = vec![0.0; n];
    let mut mu_all = Matrix::zeros(n, d);
    let mut mu_tilde_all = Matrix::zeros(n, d);
    let mut run_max_all = vec![0.0; n];
    let mut argmax_all = vec![0usize; n];
    let mut lambda_all = vec![0.0; n];
    let mut status_all = vec![RowStatus::Converged(0); n];

    let mut row0 = 0;
    while row0 < n {
        let row1 = (row0 + cfg.block_rows).min(n);
        let b = row1 - row0;
        let q_blk = q.row_block(row0, row1);
        let q_sq_blk = row_sq_norms(&q_blk);

        // Pass 1: statistics with online max; stripe collects raw logits.
        let mut acc = StatsAccumulator::new(&q_blk, row0, cfg.h, cfg.causal, cfg.logits);
        let mut stripe = crate::cg::WStripe::new(b);
        let key_ceiling = if cfg.causal { row1.min(n) } else { n };
        let mut col0 = 0;
        while col0 < key_ceiling {
            let col1 = (col0 + cfg.block_cols).min(key_ceiling);
            acc.absorb_range(k, col0, col1, &k_sq, Some(&mut stripe));
            col0 = col1;
        }
        let stats = acc.finish();

        // Stripe logits -> stabilized weights under the final max.
        for r in 0..b {
            let m = stats.run_max[r];
            for w in stripe.row_mut(r).iter_mut() {
                *w = math::exp(*w - m);
            }
        }

        let lambda_blk_vals = {
            let base: Vec<f64> = (row0..row1).map(|i| cfg.lambda.get(i)).collect();
            resolve_lambda_rows(&Lambda::PerRow(base), &stats.run_max, cfg.lambda_scale)
        };
        let lambda_blk = Lambda::PerRow(lambda_blk_vals.clone());

        // Pass 2: batched CG for rho = Sigma^{-1} mu.
        let core = SigmaCore {
            q: &q_blk,
            q_sq: &q_sq_blk,
            row0,
            k,
            k_sq: &k_sq,
            run_max: &stats.run_max,
            h: cfg.h,
            causal: cfg.causal,
            kind: cfg.logits,
            stripe: Some(&stripe),
        };
        let (rho_blk, report) = core.solve(&stats.mu, cfg.cg.max_iters, cfg.cg.tol, &lambda_blk, false);

        // Pass 3: delta and the output rows.
        for r in 0..b {
            let i = row0 + r;
            let delta = stats.omega[r] - dot(stats.mu.row(r), rho_blk.row(r));
            if math::abs(delta) < DELTA_FLOOR {
                return Err(Error::DegenerateDenominator { row: i, delta });
            }
            let len = core.key_count(r);
            let w = stripe.row(r);
            let rho_r = rho_blk.row(r);
            let rq = dot(rho_r, q_blk.row(r));
            let orow = out.row_mut(i);
            for j in 0..len {
                let a = dot(rho_r, k.row(j)) - rq;
                let s = w[j] * (1.0 - a) / delta;
                axpy(s, v.row(j), orow);
            }
            delta_all[i] = delta;
        }

        // Fold block results into the sequence-level cache.
        for r in 0..b {
            let i = row0 + r;
            rho_all.row_mut(i).copy_from_slice(rho_blk.row(r));
            omega_all[i] = stats.omega[r];
            mu_all.row_mut(i).copy_from_slice(stats.mu.row(r));
            mu_tilde_all.row_mut(i).copy_from_slice(stats.mu_tilde.row(r));
            run_max_all[i] = stats.run_max[r];
            argmax_all[i] = stats.run_argmax[r];
            lambda_all[i] = lambda_blk_vals[r];
            status_all[i] = report.status[r];
        }

        row0 = row1;
    }

    let stats = CenteredStats {
        omega: omega_all,
        mu_tilde: mu_tilde_all,
        mu: mu_all,
        run_max: run_max_all,
        run_argmax: argmax_all,
    };
    Ok((
        out,
        LLAForwardCache {
            r: rho_all,
            delta: delta_all,
            stats,
            lambda_rows: lambda_all,
            cg: status_all,
        },
    ))
}
