//! Empirical convergence-rate separation of the three estimator classes on
//! the quadratic-disk instance: global linear error stays flat, the local
//! constant (NW) estimator converges at the boundary-limited rate, and the
//! local linear estimator converges strictly faster.
//!
//! Integrated error is Monte-Carlo: a fixed set of evaluation points is
//! drawn once, the bandwidth is swept per sample size, and each
//! `(estimator, n)` reports its best-bandwidth mean integrated squared
//! error against the true function (oracle bandwidth selection, matching
//! how the rates are stated).

use anyhow::{bail, Result};
use lla_core::baselines::global_linear_fit;
use lla_core::datagen::{gen_iid_regression, stream_rng, Gaussian, RegressionTarget};
use lla_core::tensor::{dot, Matrix};

use crate::formats::{Cell, Table};

use super::{loglog_slope, mean, thread_pool};

/// Stream slot for the shared evaluation grid.
const EVAL_SLOT: u32 = u32::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    GlobalLinear,
    NadarayaWatson,
    LocalLinear,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [
        Estimator::GlobalLinear,
        Estimator::NadarayaWatson,
        Estimator::LocalLinear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::GlobalLinear => "gl",
            Estimator::NadarayaWatson => "nw",
            Estimator::LocalLinear => "ll",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateCheckConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub noise: f64,
    pub mc_points: usize,
    pub bandwidths: Vec<f64>,
    pub ll_ridge: f64,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        // Geometric bandwidth grid at sqrt(2) spacing, wide enough to
        // bracket the oracle bandwidths of both kernels over the n grid.
        let bandwidths: Vec<f64> = (0..17)
            .map(|k| 0.005 * 2f64.powf(k as f64 / 2.0))
            .collect();
        RateCheckConfig {
            n_grid: (7..=13).map(|k| 1usize << k).collect(),
            reps: 64,
            noise: 0.2,
            mc_points: 512,
            bandwidths,
            ll_ridge: 1e-8,
            seed: 0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateRow {
    pub estimator: Estimator,
    pub n: usize,
    pub mse: f64,
    pub best_bandwidth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RateCheckReport {
    pub rows: Vec<RateRow>,
}

impl RateCheckReport {
    pub fn slope(&self, est: Estimator) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.estimator == est)
            .map(|r| (r.n as f64, r.mse))
            .collect();
        loglog_slope(&pts)
    }

    pub fn level_at_largest_n(&self, est: Estimator) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.estimator == est)
            .max_by_key(|r| r.n)
            .map(|r| r.mse)
            .expect("estimator rows present")
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["estimator", "n", "mse"]);
        for r in &self.rows {
            t.push(vec![
                Cell::Str(r.estimator.name().to_string()),
                Cell::Int(r.n as i64),
                Cell::Float(r.mse),
            ]);
        }
        t
    }
}

/// Solve a small symmetric system by Gaussian elimination with partial
/// pivoting; returns `None` on numerical singularity.
fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for c in col..m {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    Some((0..m).map(|i| b[i] / a[i][i]).collect())
}

/// Per-replication integrated squared errors: GL plus NW/LL per bandwidth.
struct RepErrors {
    gl: f64,
    nw: Vec<f64>,
    ll: Vec<f64>,
}

fn eval_rep(
    cfg: &RateCheckConfig,
    n: usize,
    sample: u64,
    eval_x: &Matrix,
    eval_f: &[f64],
) -> Result<RepErrors> {
    let d = 2;
    let (x, y) = gen_iid_regression(n, d, &RegressionTarget::QuadraticDisk, cfg.noise, cfg.seed, sample)?;
    let nh = cfg.bandwidths.len();
    let m_pts = eval_x.rows();

    // Global linear: one fit, bandwidth-free.
    let fit = global_linear_fit(&x, &y)?;
    let mut gl = 0.0;
    for e in 0..m_pts {
        let p = fit.predict(eval_x.row(e))[0];
        gl += (p - eval_f[e]) * (p - eval_f[e]);
    }
    gl /= m_pts as f64;

    let dim = d + 1;
    let mut nw = vec![0.0; nh];
    let mut ll = vec![0.0; nh];
    // Per-bandwidth accumulators for one evaluation point.
    let mut den = vec![0.0; nh];
    let mut num = vec![0.0; nh];
    let mut normal = vec![vec![vec![0.0; dim]; dim]; nh];
    let mut rhs = vec![vec![0.0; dim]; nh];
    for e in 0..m_pts {
        let x0 = eval_x.row(e);
        for h in 0..nh {
            den[h] = 0.0;
            num[h] = 0.0;
            for row in normal[h].iter_mut() {
                row.fill(0.0);
            }
            rhs[h].fill(0.0);
        }
        for i in 0..n {
            let xi = x.row(i);
            let z0 = xi[0] - x0[0];
            let z1 = xi[1] - x0[1];
            let sq = z0 * z0 + z1 * z1;
            let yi = y.get(i, 0);
            for (h, &bw) in cfg.bandwidths.iter().enumerate() {
                let w = (-sq / bw).exp();
                if w == 0.0 {
                    continue;
                }
                den[h] += w;
                num[h] += w * yi;
                let design = [1.0, z0, z1];
                let nm = &mut normal[h];
                for p in 0..dim {
                    let wd = w * design[p];
                    for q in p..dim {
                        nm[p][q] += wd * design[q];
                    }
                    rhs[h][p] += wd * yi;
                }
            }
        }
        for h in 0..nh {
            let truth = eval_f[e];
            let nw_pred = if den[h] > 1e-280 { num[h] / den[h] } else { 0.0 };
            nw[h] += (nw_pred - truth) * (nw_pred - truth);
            // Mirror the upper triangle, ridge the slope block.
            let mut a: Vec<Vec<f64>> = (0..dim)
                .map(|p| {
                    (0..dim)
                        .map(|q| {
                            if q >= p {
                                normal[h][p][q]
                            } else {
                                normal[h][q][p]
                            }
                        })
                        .collect()
                })
                .collect();
            for p in 1..dim {
                a[p][p] += cfg.ll_ridge;
            }
            let mut b = rhs[h].clone();
            let ll_pred = match solve_small(&mut a, &mut b) {
                Some(sol) => sol[0],
                None => 0.0,
            };
            ll[h] += (ll_pred - truth) * (ll_pred - truth);
        }
    }
    for h in 0..nh {
        nw[h] /= m_pts as f64;
        ll[h] /= m_pts as f64;
    }
    Ok(RepErrors { gl, nw, ll })
}

pub fn run_ratecheck(cfg: &RateCheckConfig) -> Result<RateCheckReport> {
    if cfg.reps == 0 || cfg.n_grid.is_empty() || cfg.bandwidths.is_empty() {
        bail!("ratecheck needs reps, an n grid, and a bandwidth grid");
    }
    // Fixed Monte-Carlo integration points on the unit disk.
    let mut rng = stream_rng(cfg.seed, 0, EVAL_SLOT);
    let mut g = Gaussian::new();
    let mut eval_x = Matrix::zeros(cfg.mc_points, 2);
    for e in 0..cfg.mc_points {
        lla_core::datagen::ball_uniform(&mut rng, &mut g, eval_x.row_mut(e));
    }
    let eval_f: Vec<f64> = (0..cfg.mc_points)
        .map(|e| dot(eval_x.row(e), eval_x.row(e)))
        .collect();

    let pool = thread_pool(cfg.threads)?;
    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let per_rep: Vec<Result<RepErrors>> = pool.install(|| {
            use rayon::prelude::*;
            (0..cfg.reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let sample = (ni as u64) * cfg.reps as u64 + rep + 1;
                    eval_rep(cfg, n, sample, &eval_x, &eval_f)
                })
                .collect()
        });
        let mut gl_all = Vec::with_capacity(cfg.reps);
        let nh = cfg.bandwidths.len();
        let mut nw_all = vec![Vec::with_capacity(cfg.reps); nh];
        let mut ll_all = vec![Vec::with_capacity(cfg.reps); nh];
        for r in per_rep {
            let r = r?;
            gl_all.push(r.gl);
            for h in 0..nh {
                nw_all[h].push(r.nw[h]);
                ll_all[h].push(r.ll[h]);
            }
        }
        rows.push(RateRow {
            estimator: Estimator::GlobalLinear,
            n,
            mse: mean(&gl_all),
            best_bandwidth: None,
        });
        for (est, all) in [(Estimator::NadarayaWatson, &nw_all), (Estimator::LocalLinear, &ll_all)]
        {
            let mut best = f64::INFINITY;
            let mut best_h = cfg.bandwidths[0];
            for h in 0..nh {
                let m = mean(&all[h]);
                if m < best {
                    best = m;
                    best_h = cfg.bandwidths[h];
                }
            }
            rows.push(RateRow {
                estimator: est,
                n,
                mse: best,
                best_bandwidth: Some(best_h),
            });
        }
    }
    Ok(RateCheckReport { rows })
}
