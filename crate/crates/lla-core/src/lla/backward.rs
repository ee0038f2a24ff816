//! Analytic backward pass for the LLA forward.
//!
//! For loss adjoint `g_i = dL/dO[i]`, define per pair `gamma_ij = g_i.v_j`,
//! per row `beta_i = (1/delta_i) sum_j gamma_ij s_ij`, `c_ij = gamma_ij
//! w_ij / delta_i`, and the second CG solve
//! `u_i = Sigma_i^{-1} sum_j c_ij z_ij`. With `a_ij = z_ij.rho_i`,
//! `b_ij = z_ij.u_i` and `n_ij = 1 - a_ij`, the weight-path adjoint
//! collapses to
//!
//! `w_ij dL/dw_ij = gamma_ij s_ij - w_ij n_ij (beta_i n_ij + b_ij)`
//!
//! and the difference-path adjoint to
//!
//! `dL/dz_ij = -c_ij rho_i + w_ij Dmu_i + w_ij (a_ij u_i + b_ij rho_i
//!             - 2 beta_i a_ij rho_i)`,  `Dmu_i = -u_i + 2 beta_i rho_i`.
//!
//! `dV = S^T G` exactly. Everything is evaluated blockwise from the cached
//! running max without storing the weight matrix. Under the default
//! `LambdaScale::Shifted` the output also depends on the running max itself
//! (the ridge sits on the shifted scale), so the total derivative picks up
//! `dL/dm_i = -sum_j w_ij dL/dw_ij`, routed through the argmax key; under
//! `Strict` the output is exactly max-invariant and the term vanishes.

use alloc::vec;
use alloc::vec::Vec;

use crate::cg::{CgReport, Lambda, RowStatus, SigmaCore};
use crate::kernel::row_sq_norms;
use crate::kernel::LogitKind;
use crate::tensor::{axpy, dot, Matrix};
use crate::{Error, Result};

use super::{build_stripe, merged_report, GradientBundle, LLAConfig, LLAForwardCache, LambdaScale};

pub fn lla_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cache: &LLAForwardCache,
    d_out: &Matrix,
    cfg: &LLAConfig,
) -> Result<(GradientBundle, CgReport)> {
    let n = q.rows();
    let d = q.cols();
    let dv_dim = v.cols();
    if k.rows() != n || v.rows() != n || k.cols() != d {
        return Err(Error::ShapeMismatch {
            expected: (n, d),
            got: (k.rows(), k.cols()),
            what: "lla_backward inputs",
        });
    }
    if d_out.rows() != n || d_out.cols() != dv_dim {
        return Err(Error::ShapeMismatch {
            expected: (n, dv_dim),
            got: (d_out.rows(), d_out.cols()),
            what: "lla_backward adjoint",
        });
    }
    if cache.r.rows() != n || cache.r.cols() != d || cache.delta.len() != n || cache.stats.rows() != n
    {
        return Err(Error::InconsistentStats("cache does not match inputs"));
    }

    let k_sq = row_sq_norms(k);
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, dv_dim);
    let mut status_all = vec![RowStatus::Converged(0); n];

    let mut ck = vec![0.0; d];
    let mut dqw = vec![0.0; d];

    let mut row0 = 0;
    while row0 < n {
        let row1 = (row0 + cfg.block_rows).min(n);
        let b = row1 - row0;
        let q_blk = q.row_block(row0, row1);
        let q_sq_blk = row_sq_norms(&q_blk);
        let run_max_blk = &cache.stats.run_max[row0..row1];

        let stripe = build_stripe(
            &q_blk,
            row0,
            k,
            &k_sq,
            &q_sq_blk,
            cfg.h,
            cfg.logits,
            run_max_blk,
            cfg.causal,
        );
        let core = SigmaCore {
            q: &q_blk,
            q_sq: &q_sq_blk,
            row0,
            k,
            k_sq: &k_sq,
            run_max: run_max_blk,
            h: cfg.h,
            causal: cfg.causal,
            kind: cfg.logits,
            stripe: Some(&stripe),
        };
        let lambda_blk = Lambda::PerRow(cache.lambda_rows[row0..row1].to_vec());

        // First sweep: dV scatter, beta, and the rhs of the u-system.
        let mut beta = vec![0.0; b];
        let mut rhs_u = Matrix::zeros(b, d);
        let mut a_stripe: Vec<Vec<f64>> = vec![Vec::new(); b];
        let mut g_stripe: Vec<Vec<f64>> = vec![Vec::new(); b];
        for r in 0..b {
            let i = row0 + r;
            let len = core.key_count(r);
            let g = d_out.row(i);
            let rho = cache.r.row(i);
            let delta = cache.delta[i];
            let rq = dot(rho, q_blk.row(r));
            let w = stripe.row(r);
            let arow = &mut a_stripe[r];
            let grow = &mut g_stripe[r];
            arow.reserve(len);
            grow.reserve(len);
            let mut cs = 0.0;
            ck.fill(0.0);
            let mut bsum = 0.0;
            for j in 0..len {
                let a = dot(rho, k.row(j)) - rq;
                let gam = dot(g, v.row(j));
                let s = w[j] * (1.0 - a) / delta;
                bsum += gam * s;
                axpy(s, g, dv.row_mut(j));
                let c = gam * w[j] / delta;
                cs += c;
                axpy(c, k.row(j), &mut ck);
                arow.push(a);
                grow.push(gam);
            }
            beta[r] = bsum / delta;
            let rhs = rhs_u.row_mut(r);
            for ((slot, &ckv), &qv) in rhs.iter_mut().zip(&ck).zip(q_blk.row(r)) {
                *slot = ckv - cs * qv;
            }
        }

        // Second CG solve, on the same shifted weights and ridge as forward.
        let (u_blk, report) = core.solve(&rhs_u, cfg.cg.max_iters, cfg.cg.tol, &lambda_blk, false);
        status_all[row0..row1].copy_from_slice(&report.status);

        // Dmu = -U + 2 beta rho.
        let mut dmu = Matrix::zeros(b, d);
        for r in 0..b {
            let i = row0 + r;
            let dst = dmu.row_mut(r);
            for ((slot, &uv), &rv) in dst.iter_mut().zip(u_blk.row(r)).zip(cache.r.row(i)) {
                *slot = -uv + 2.0 * beta[r] * rv;
            }
        }

        // Second sweep: weight-path and difference-path gradients.
        for r in 0..b {
            let i = row0 + r;
            let len = core.key_count(r);
            let w = stripe.row(r);
            let arow = &a_stripe[r];
            let grow = &g_stripe[r];
            let rho = cache.r.row(i);
            let u_r = u_blk.row(r);
            let dmu_r = dmu.row(r);
            let delta = cache.delta[i];
            let uq = dot(u_r, q_blk.row(r));
            dqw.fill(0.0);
            let mut sum_dw = 0.0;
            let mut sum_trho = 0.0;
            let mut sum_tu = 0.0;
            let mut sum_w = 0.0;
            let mut euler = 0.0;
            for j in 0..len {
                let wij = w[j];
                let a = arow[j];
                let gam = grow[j];
                let nn = 1.0 - a;
                let b_ij = dot(u_r, k.row(j)) - uq;
                let s = wij * nn / delta;
                let dw_entry = gam * s - wij * nn * (beta[r] * nn + b_ij);
                euler += dw_entry;
                match cfg.logits {
                    LogitKind::InnerProduct => {
                        axpy(dw_entry / cfg.h, k.row(j), &mut dqw);
                        axpy(dw_entry / cfg.h, q_blk.row(r), dk.row_mut(j));
                    }
                    LogitKind::NegSqDist => {
                        let t = 2.0 * dw_entry / cfg.h;
                        axpy(t, k.row(j), &mut dqw);
                        sum_dw += dw_entry;
                        let dkj = dk.row_mut(j);
                        axpy(t, q_blk.row(r), dkj);
                        axpy(-t, k.row(j), dk.row_mut(j));
                    }
                }
                let c = gam * wij / delta;
                let trho = -c + wij * b_ij - 2.0 * beta[r] * wij * a;
                let tu = wij * a;
                let dkj = dk.row_mut(j);
                axpy(trho, rho, dkj);
                axpy(tu, u_r, dk.row_mut(j));
                axpy(wij, dmu_r, dk.row_mut(j));
                sum_trho += trho;
                sum_tu += tu;
                sum_w += wij;
            }
            let dq_row = dq.row_mut(i);
            axpy(1.0, &dqw, dq_row);
            if let LogitKind::NegSqDist = cfg.logits {
                axpy(-2.0 * sum_dw / cfg.h, q_blk.row(r), dq.row_mut(i));
            }
            axpy(-sum_trho, rho, dq.row_mut(i));
            axpy(-sum_tu, u_r, dq.row_mut(i));
            axpy(-sum_w, dmu_r, dq.row_mut(i));

            // Running-max path: only present when the ridge sits on the
            // shifted scale. dL/dm_i = -euler, routed through the argmax key.
            if cfg.lambda_scale == LambdaScale::Shifted {
                let jstar = cache.stats.run_argmax[i];
                if jstar != usize::MAX && euler != 0.0 {
                    match cfg.logits {
                        LogitKind::InnerProduct => {
                            axpy(-euler / cfg.h, k.row(jstar), dq.row_mut(i));
                            axpy(-euler / cfg.h, q_blk.row(r), dk.row_mut(jstar));
                        }
                        LogitKind::NegSqDist => {
                            let t = -2.0 * euler / cfg.h;
                            // dm/dq = 2(k* - q)/h, dm/dk* = 2(q - k*)/h.
                            axpy(t, k.row(jstar), dq.row_mut(i));
                            axpy(-t, q_blk.row(r), dq.row_mut(i));
                            axpy(t, q_blk.row(r), dk.row_mut(jstar));
                            axpy(-t, k.row(jstar), dk.row_mut(jstar));
                        }
                    }
                }
            }
        }

        row0 = row1;
    }

    Ok((GradientBundle { dq, dk, dv }, merged_report(status_all)))
}
