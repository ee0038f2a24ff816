//! Single-precision variant of the blockwise forward, for comparing the
//! numerical sensitivity of the per-query inversion against the `f64`
//! reference. Forward only, no cache; the training path stays in `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::LogitKind;
use crate::math;
use crate::tensor::Matrix;
use crate::{Error, Result};

use super::{LLAConfig, LambdaScale, DELTA_FLOOR};

fn to_f32(m: &Matrix) -> Vec<f32> {
    m.data().iter().map(|&v| v as f32).collect()
}

#[inline(always)]
fn dot32(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline(always)]
fn axpy32(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline(always)]
fn logit32(kind: LogitKind, q: &[f32], k: &[f32], h: f32, qn: f32, kn: f32) -> f32 {
    match kind {
        LogitKind::InnerProduct => dot32(q, k) / h,
        LogitKind::NegSqDist => (2.0 * dot32(q, k) - qn - kn) / h,
    }
}

pub fn lla_forward_blockwise_f32(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &LLAConfig,
) -> Result<Matrix> {
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
    if cfg.h <= 0.0 {
        return Err(Error::InvalidBandwidth(cfg.h));
    }
    cfg.lambda.validate(n, true)?;

    let h = cfg.h as f32;
    let qf = to_f32(q);
    let kf = to_f32(k);
    let vf = to_f32(v);
    let q_sq: Vec<f32> = (0..n).map(|i| dot32(&qf[i * d..(i + 1) * d], &qf[i * d..(i + 1) * d])).collect();
    let k_sq: Vec<f32> = (0..n).map(|j| dot32(&kf[j * d..(j + 1) * d], &kf[j * d..(j + 1) * d])).collect();

    // Relative tolerances below f32 epsilon are unreachable.
    let tol = (cfg.cg.tol as f32).max(1e-6);

    let mut out = vec![0.0f32; n * dv];

    let mut row0 = 0;
    while row0 < n {
        let row1 = (row0 + cfg.block_rows).min(n);
        let b = row1 - row0;

        // Pass 1: stats + logit stripe (single block sweep; the online
        // rescale is the same recurrence as the f64 path).
        let mut omega = vec![0.0f32; b];
        let mut mu_tilde = vec![0.0f32; b * d];
        let mut run_max = vec![f32::NEG_INFINITY; b];
        let mut stripe: Vec<Vec<f32>> = vec![Vec::new(); b];
        let key_ceiling = if cfg.causal { row1.min(n) } else { n };
        let mut col0 = 0;
        while col0 < key_ceiling {
            let col1 = (col0 + cfg.block_cols).min(key_ceiling);
            for r in 0..b {
                let i = row0 + r;
                let jmax = if cfg.causal {
                    if col0 > i {
                        continue;
                    }
                    (i - col0 + 1).min(col1 - col0)
                } else {
                    col1 - col0
                };
                let qi = &qf[i * d..(i + 1) * d];
                let mut block_max = f32::NEG_INFINITY;
                let base = stripe[r].len();
                for j in 0..jmax {
                    let jj = col0 + j;
                    let l = logit32(cfg.logits, qi, &kf[jj * d..(jj + 1) * d], h, q_sq[i], k_sq[jj]);
                    stripe[r].push(l);
                    block_max = block_max.max(l);
                }
                let m_old = run_max[r];
                let m_new = m_old.max(block_max);
                if m_old > f32::NEG_INFINITY && m_new > m_old {
                    let alpha = math::expf32(m_old - m_new);
                    omega[r] *= alpha;
                    for t in mu_tilde[r * d..(r + 1) * d].iter_mut() {
                        *t *= alpha;
                    }
                }
                run_max[r] = m_new;
                for j in 0..jmax {
                    let jj = col0 + j;
                    let w = math::expf32(stripe[r][base + j] - m_new);
                    omega[r] += w;
                    axpy32(w, &kf[jj * d..(jj + 1) * d], &mut mu_tilde[r * d..(r + 1) * d]);
                }
            }
            col0 = col1;
        }
        for r in 0..b {
            let m = run_max[r];
            for w in stripe[r].iter_mut() {
                *w = math::expf32(*w - m);
            }
        }
        let mut mu = mu_tilde.clone();
        for r in 0..b {
            let i = row0 + r;
            let om = omega[r];
            for (t, &qv) in mu[r * d..(r + 1) * d].iter_mut().zip(&qf[i * d..(i + 1) * d]) {
                *t -= om * qv;
            }
        }
        let lambda_rows: Vec<f32> = (0..b)
            .map(|r| {
                let base = cfg.lambda.get(row0 + r) as f32;
                match cfg.lambda_scale {
                    LambdaScale::Shifted => base,
                    LambdaScale::Strict => {
                        if run_max[r].is_finite() {
                            base * math::expf32(-run_max[r])
                        } else {
                            base
                        }
                    }
                }
            })
            .collect();

        // Pass 2: batched CG on the shifted system.
        let key_count = |r: usize| if cfg.causal { (row0 + r + 1).min(n) } else { n };
        let matvec = |r: usize, p: &[f32], outp: &mut [f32]| {
            let i = row0 + r;
            let qi = &qf[i * d..(i + 1) * d];
            let mt = &mu_tilde[r * d..(r + 1) * d];
            outp.fill(0.0);
            let w = &stripe[r];
            for j in 0..key_count(r) {
                let kj = &kf[j * d..(j + 1) * d];
                let kp = dot32(kj, p);
                axpy32(w[j] * kp, kj, outp);
            }
            let qp = dot32(qi, p);
            let mp = dot32(mt, p);
            for ((o, &qv), &mv) in outp.iter_mut().zip(qi).zip(mt) {
                *o += -qp * mv - mp * qv + omega[r] * qp * qv;
            }
            axpy32(lambda_rows[r], p, outp);
        };

        let mut x = vec![0.0f32; b * d];
        let mut res = mu.clone();
        let mut p = mu.clone();
        let mut sp = vec![0.0f32; d];
        for r in 0..b {
            let rrow = r * d..(r + 1) * d;
            let mut rs = dot32(&res[rrow.clone()], &res[rrow.clone()]);
            // (tol * max(1, ||y||))^2 == tol^2 * max(1, ||y||^2).
            let thr = tol * tol * dot32(&mu[rrow.clone()], &mu[rrow.clone()]).max(1.0);
            if rs <= thr {
                continue;
            }
            for _t in 0..cfg.cg.max_iters {
                matvec(r, &p[rrow.clone()], &mut sp);
                let curv = dot32(&p[rrow.clone()], &sp);
                if curv <= 0.0 || !curv.is_finite() {
                    break;
                }
                let alpha = rs / curv;
                for (xi, pi) in x[rrow.clone()].iter_mut().zip(&p[rrow.clone()]) {
                    *xi += alpha * pi;
                }
                for (ri, si) in res[rrow.clone()].iter_mut().zip(&sp) {
                    *ri -= alpha * si;
                }
                let rs_new = dot32(&res[rrow.clone()], &res[rrow.clone()]);
                if rs_new <= thr {
                    break;
                }
                let betac = rs_new / rs;
                for (pi, &ri) in p[rrow.clone()].iter_mut().zip(&res[rrow.clone()]) {
                    *pi = ri + betac * *pi;
                }
                rs = rs_new;
            }
        }

        // Pass 3: outputs.
        for r in 0..b {
            let i = row0 + r;
            let rho = &x[r * d..(r + 1) * d];
            let delta = omega[r] - dot32(&mu[r * d..(r + 1) * d], rho);
            if (delta.abs() as f64) < DELTA_FLOOR {
                return Err(Error::DegenerateDenominator {
                    row: i,
                    delta: delta as f64,
                });
            }
            let rq = dot32(rho, &qf[i * d..(i + 1) * d]);
            let w = &stripe[r];
            let mut orow = vec![0.0f32; dv];
            for j in 0..key_count(r) {
                let a = dot32(rho, &kf[j * d..(j + 1) * d]) - rq;
                let s = w[j] * (1.0 - a) / delta;
                axpy32(s, &vf[j * dv..(j + 1) * dv], &mut orow);
            }
            out[i * dv..(i + 1) * dv].copy_from_slice(&orow);
        }

        row0 = row1;
    }

    Matrix::from_vec(n, dv, out.into_iter().map(|v| v as f64).collect())
}
