//! Finite-difference verification of the analytic backward pass.
//!
//! The loss is `L = <dO, O(Q, K, V)>`. Finite differences rerun the dense
//! forward around perturbed inputs, so they see the true total derivative,
//! including the running-max path that exists under the default shifted
//! ridge scale.

mod common;

use common::{central_fd, max_rel_err, randn_matrix};
use lla_core::cg::Lambda;
use lla_core::lla::{
    lla_backward, lla_forward_naive, GradientBundle, LLAConfig, LambdaScale,
};
use lla_core::tensor::Matrix;

const FD_STEP: f64 = 1e-5;
// O is linear in V, so central differences are exact at any step; a larger
// step just reduces floating-point cancellation in the loss difference.
const FD_STEP_V: f64 = 1e-2;

fn loss(q: &Matrix, k: &Matrix, v: &Matrix, d_out: &Matrix, cfg: &LLAConfig) -> f64 {
    let (o, _) = lla_forward_naive(q, k, v, cfg).expect("forward");
    o.data().iter().zip(d_out.data()).map(|(a, b)| a * b).sum()
}

fn analytic_grads(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_out: &Matrix,
    cfg: &LLAConfig,
) -> GradientBundle {
    let (_, cache) = lla_forward_naive(q, k, v, cfg).expect("forward");
    // Tight CG for the u-system so solver error stays far below FD noise.
    let mut bcfg = cfg.clone();
    bcfg.cg.max_iters = 2 * q.cols();
    bcfg.cg.tol = 1e-13;
    let (grads, report) = lla_backward(q, k, v, &cache, d_out, &bcfg).expect("backward");
    assert!(
        !report.status.iter().any(|s| matches!(s, lla_core::cg::RowStatus::Breakdown)),
        "u-system breakdown"
    );
    grads
}

fn check_case(n: usize, d: usize, lambda: f64, scale: LambdaScale, seed: u64, tol_qk: f64) {
    let q = randn_matrix(n, d, seed, 0);
    let k = randn_matrix(n, d, seed, 1);
    let v = randn_matrix(n, d, seed, 2);
    let d_out = randn_matrix(n, d, seed, 3);
    let mut cfg = LLAConfig::new(d).with_lambda(lambda);
    cfg.lambda_scale = scale;
    cfg.block_rows = 3; // exercise the block seams in backward

    let grads = analytic_grads(&q, &k, &v, &d_out, &cfg);

    let fd_q = central_fd(&q, FD_STEP, |qp| loss(qp, &k, &v, &d_out, &cfg));
    let fd_k = central_fd(&k, FD_STEP, |kp| loss(&q, kp, &v, &d_out, &cfg));
    let fd_v = central_fd(&v, FD_STEP_V, |vp| loss(&q, &k, vp, &d_out, &cfg));

    let err_q = max_rel_err(&grads.dq, &fd_q, 1e-6);
    let err_k = max_rel_err(&grads.dk, &fd_k, 1e-6);
    let err_v = max_rel_err(&grads.dv, &fd_v, 1e-6);
    assert!(
        err_q < tol_qk,
        "dQ mismatch {err_q:.3e} (n={n} d={d} lambda={lambda} {scale:?} seed={seed})"
    );
    assert!(
        err_k < tol_qk,
        "dK mismatch {err_k:.3e} (n={n} d={d} lambda={lambda} {scale:?} seed={seed})"
    );
    assert!(err_v < 1e-9, "dV mismatch {err_v:.3e}");
}

#[test]
fn gradients_match_fd_shifted_scale() {
    check_case(6, 4, 0.5, LambdaScale::Shifted, 11, 1e-5);
    check_case(8, 3, 1.0, LambdaScale::Shifted, 12, 1e-5);
    check_case(5, 5, 0.2, LambdaScale::Shifted, 13, 1e-5);
}

#[test]
fn gradients_match_fd_strict_scale() {
    check_case(6, 4, 0.5, LambdaScale::Strict, 21, 1e-5);
    check_case(7, 4, 2.0, LambdaScale::Strict, 22, 1e-5);
}

#[test]
fn dv_is_exact_linear_path() {
    // O is linear in V at fixed Q, K: S^T dO must match FD essentially to
    // rounding.
    let n = 8;
    let d = 5;
    let q = randn_matrix(n, d, 31, 0);
    let k = randn_matrix(n, d, 31, 1);
    let v = randn_matrix(n, d, 31, 2);
    let d_out = randn_matrix(n, d, 31, 3);
    let cfg = LLAConfig::new(d).with_lambda(0.7);
    let grads = analytic_grads(&q, &k, &v, &d_out, &cfg);
    let fd_v = central_fd(&v, FD_STEP_V, |vp| loss(&q, &k, vp, &d_out, &cfg));
    assert!(max_rel_err(&grads.dv, &fd_v, 1e-6) < 1e-9);
}

#[test]
fn zero_adjoint_gives_zero_gradients() {
    let n = 5;
    let d = 3;
    let q = randn_matrix(n, d, 41, 0);
    let k = randn_matrix(n, d, 41, 1);
    let v = randn_matrix(n, d, 41, 2);
    let cfg = LLAConfig::new(d).with_lambda(0.5);
    let d_out = Matrix::zeros(n, d);
    let grads = analytic_grads(&q, &k, &v, &d_out, &cfg);
    assert_eq!(grads.dq, Matrix::zeros(n, d));
    assert_eq!(grads.dk, Matrix::zeros(n, d));
    assert_eq!(grads.dv, Matrix::zeros(n, d));
}

#[test]
fn gradients_finite_on_all_entries() {
    let n = 7;
    let d = 4;
    let q = randn_matrix(n, d, 51, 0);
    let k = randn_matrix(n, d, 51, 1);
    let v = randn_matrix(n, d, 51, 2);
    let d_out = randn_matrix(n, d, 51, 3);
    let cfg = LLAConfig::new(d).with_lambda(0.3);
    let grads = analytic_grads(&q, &k, &v, &d_out, &cfg);
    for g in [&grads.dq, &grads.dk, &grads.dv] {
        assert!(g.data().iter().all(|x| x.is_finite()));
    }
}
