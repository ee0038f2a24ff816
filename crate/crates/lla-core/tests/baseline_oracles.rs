//! Baseline estimators against from-scratch oracles, and the cross-module
//! equivalence between the estimator-form local linear regression and the
//! attention-form forward.

mod common;

use common::{gauss_solve, randn_matrix};
use lla_core::baselines::{
    global_linear_fit, la_recall_mse, local_linear_estimate, mesanet, nw_estimate,
    softmax_attention, vanilla_la,
};
use lla_core::kernel::LogitKind;
use lla_core::lla::{lla_forward_naive, LLAConfig, LambdaScale};
use lla_core::tensor::{dot, Matrix};

#[test]
fn softmax_matches_pairwise_oracle_and_is_convex() {
    let n = 9;
    let d = 4;
    let h = 1.7;
    let q = randn_matrix(n, d, 201, 0);
    let k = randn_matrix(n, d, 201, 1);
    let v = randn_matrix(n, d, 201, 2);
    let out = softmax_attention(&q, &k, &v, h, true).unwrap();
    for i in 0..n {
        let mut weights = Vec::new();
        for j in 0..=i {
            weights.push((dot(q.row(i), k.row(j)) / h).exp());
        }
        let sw: f64 = weights.iter().sum();
        for t in 0..d {
            let mut expect = 0.0;
            for (j, w) in weights.iter().enumerate() {
                expect += w / sw * v.get(j, t);
            }
            assert!((out.get(i, t) - expect).abs() < 1e-12);
        }
        let total: f64 = weights.iter().map(|w| w / sw).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(weights.iter().all(|&w| w / sw >= 0.0 && w / sw <= 1.0));
    }
}

#[test]
fn vanilla_la_matches_outer_product_sum() {
    let n = 7;
    let d = 3;
    let q = randn_matrix(n, d, 203, 0);
    let k = randn_matrix(n, d, 203, 1);
    let v = randn_matrix(n, d, 203, 2);
    let out = vanilla_la(&q, &k, &v, true).unwrap();
    for i in 0..n {
        for t in 0..d {
            let mut expect = 0.0;
            for j in 0..=i {
                expect += v.get(j, t) * dot(k.row(j), q.row(i));
            }
            assert!((out.get(i, t) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn mesanet_matches_dense_ridge_solve() {
    let n = 8;
    let d = 4;
    let lambda = 0.6;
    let q = randn_matrix(n, d, 207, 0);
    let k = randn_matrix(n, d, 207, 1);
    let v = randn_matrix(n, d, 207, 2);
    let out = mesanet(&q, &k, &v, lambda, true).unwrap();
    for i in 0..n {
        let mut hmat = Matrix::zeros(d, d);
        for j in 0..=i {
            for a in 0..d {
                for b in 0..d {
                    hmat.set(a, b, hmat.get(a, b) + k.get(j, a) * k.get(j, b));
                }
            }
        }
        for a in 0..d {
            hmat.set(a, a, hmat.get(a, a) + lambda);
        }
        let hq = gauss_solve(&hmat, q.row(i));
        for t in 0..d {
            let mut expect = 0.0;
            for j in 0..=i {
                expect += v.get(j, t) * dot(k.row(j), &hq);
            }
            assert!((out.get(i, t) - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn mesanet_ridge_limit_recovers_linear_map() {
    // v = A k with enough positions: lambda -> 0+ makes O[i] -> A q_i.
    let n = 24;
    let d = 3;
    let k = randn_matrix(n, d, 211, 0);
    let a = randn_matrix(d, d, 211, 1);
    let mut v = Matrix::zeros(n, d);
    for j in 0..n {
        for t in 0..d {
            v.set(j, t, dot(a.row(t), k.row(j)));
        }
    }
    let q = randn_matrix(n, d, 211, 2);
    let out = mesanet(&q, &k, &v, 1e-10, true).unwrap();
    // Check late positions where H is comfortably full rank.
    for i in d + 2..n {
        for t in 0..d {
            let expect = dot(a.row(t), q.row(i));
            assert!(
                (out.get(i, t) - expect).abs() < 1e-6,
                "position {i} dim {t}"
            );
        }
    }
}

#[test]
fn recall_mse_matches_direct_expansion() {
    let n = 10;
    let d = 4;
    let k = randn_matrix(n, d, 213, 0);
    let v = randn_matrix(n, d, 213, 1);
    let got = la_recall_mse(&k, &v).unwrap();
    // Direct evaluation: S = sum v k^T, then mean over stored pairs.
    let mut s = Matrix::zeros(d, d);
    for j in 0..n {
        for a in 0..d {
            for b in 0..d {
                s.set(a, b, s.get(a, b) + v.get(j, a) * k.get(j, b));
            }
        }
    }
    let mut expect = 0.0;
    for j in 0..n {
        for a in 0..d {
            let pred = dot(s.row(a), k.row(j));
            expect += (pred - v.get(j, a)).powi(2);
        }
    }
    expect /= n as f64;
    assert!((got - expect).abs() < 1e-10 * expect.max(1.0));
    assert!(got >= 0.0);
}

#[test]
fn global_fit_matches_normal_equations() {
    let n = 20;
    let dx = 3;
    let dy = 2;
    let x = randn_matrix(n, dx, 217, 0);
    let y = randn_matrix(n, dy, 217, 1);
    let fit = global_linear_fit(&x, &y).unwrap();
    assert!(!fit.ridged);
    // Oracle: augmented normal equations solved by elimination.
    let m = dx + 1;
    let mut a = Matrix::zeros(m, m);
    let mut rhs = Matrix::zeros(m, dy);
    for i in 0..n {
        let mut design = vec![1.0];
        design.extend_from_slice(x.row(i));
        for p in 0..m {
            for q in 0..m {
                a.set(p, q, a.get(p, q) + design[p] * design[q]);
            }
            for t in 0..dy {
                rhs.set(p, t, rhs.get(p, t) + design[p] * y.get(i, t));
            }
        }
    }
    for t in 0..dy {
        let col: Vec<f64> = (0..m).map(|p| rhs.get(p, t)).collect();
        let sol = gauss_solve(&a, &col);
        assert!((fit.intercept[t] - sol[0]).abs() < 1e-9);
        for c in 0..dx {
            assert!((fit.slope.get(t, c) - sol[c + 1]).abs() < 1e-9);
        }
    }
}

#[test]
fn global_fit_flags_rank_deficiency() {
    // Two distinct points in d=3: affine fit is underdetermined.
    let x = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
    let y = Matrix::from_rows(&[&[1.0], &[2.0]]);
    let fit = global_linear_fit(&x, &y).unwrap();
    assert!(fit.ridged);
    for i in 0..2 {
        assert!((fit.predict(x.row(i))[0] - y.get(i, 0)).abs() < 1e-3);
    }
}

#[test]
fn nw_estimate_matches_weighted_average_oracle() {
    let n = 15;
    let d = 2;
    let h = 0.8;
    let x = randn_matrix(n, d, 219, 0);
    let y = randn_matrix(n, 1, 219, 1);
    let x0 = [0.25, -0.4];
    let got = nw_estimate(&x, &y, &x0, h).unwrap();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for a in 0..d {
            sq += (x.get(i, a) - x0[a]).powi(2);
        }
        let w = (-sq / h).exp();
        num += w * y.get(i, 0);
        den += w;
    }
    assert!((got[0] - num / den).abs() < 1e-12);
}

#[test]
fn local_linear_matches_dense_weighted_normal_equations() {
    let n = 30;
    let d = 2;
    let h = 0.9;
    let lambda = 0.05;
    let x = randn_matrix(n, d, 223, 0);
    let y = randn_matrix(n, 1, 223, 1);
    let x0 = [0.1, 0.3];
    let got = local_linear_estimate(&x, &y, &x0, h, lambda).unwrap();
    // Oracle on design (1, x - x0) with ridge on the slope block.
    let m = d + 1;
    let mut a = Matrix::zeros(m, m);
    let mut rhs = vec![0.0; m];
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..d {
            sq += (x.get(i, c) - x0[c]).powi(2);
        }
        let w = (-sq / h).exp();
        let mut design = vec![1.0];
        for c in 0..d {
            design.push(x.get(i, c) - x0[c]);
        }
        for p in 0..m {
            for q in 0..m {
                a.set(p, q, a.get(p, q) + w * design[p] * design[q]);
            }
            rhs[p] += w * design[p] * y.get(i, 0);
        }
    }
    for p in 1..m {
        a.set(p, p, a.get(p, p) + lambda);
    }
    let sol = gauss_solve(&a, &rhs);
    assert!((got[0] - sol[0]).abs() < 1e-9);
}

#[test]
fn estimator_form_equals_attention_form() {
    // local_linear_estimate(x0) must equal the non-causal attention forward
    // queried at x0 with distance logits and the strict ridge scale.
    let n = 18;
    let d = 3;
    let h = 2.0;
    let lambda = 0.5;
    let x = randn_matrix(n, d, 227, 0);
    let y = randn_matrix(n, d, 227, 1);
    let x0: Vec<f64> = randn_matrix(1, d, 227, 2).row(0).to_vec();

    let est = local_linear_estimate(&x, &y, &x0, h, lambda).unwrap();

    let mut q = Matrix::zeros(n, d);
    for i in 0..n {
        q.row_mut(i).copy_from_slice(&x0);
    }
    let mut cfg = LLAConfig::new(d).with_lambda(lambda);
    cfg.h = h;
    cfg.causal = false;
    cfg.logits = LogitKind::NegSqDist;
    cfg.lambda_scale = LambdaScale::Strict;
    let (o, _) = lla_forward_naive(&q, &x, &y, &cfg).unwrap();
    for t in 0..d {
        assert!(
            (o.get(0, t) - est[t]).abs() < 1e-8,
            "dim {t}: attention {} vs estimator {}",
            o.get(0, t),
            est[t]
        );
    }
}
