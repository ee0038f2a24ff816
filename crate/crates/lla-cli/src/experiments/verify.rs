//! Verification commands: blockwise-vs-naive equivalence and the
//! finite-difference gradient check. Both return structured reports; the
//! CLI maps any failed tolerance to a nonzero exit code.

use anyhow::Result;
use lla_core::baselines::softmax_attention;
use lla_core::datagen::{stream_rng, Gaussian};
use lla_core::lla::{lla_backward, lla_forward_blockwise, lla_forward_naive, LLAConfig};
use lla_core::tensor::Matrix;

use crate::formats::{Cell, Table};

pub fn randn(rows: usize, cols: usize, seed: u64, slot: u32) -> Matrix {
    let mut rng = stream_rng(seed, 0, slot);
    let mut g = Gaussian::new();
    let mut m = Matrix::zeros(rows, cols);
    g.fill(&mut rng, m.data_mut());
    m
}

#[derive(Debug, Clone)]
pub struct EquivConfig {
    pub sizes: Vec<(usize, usize)>,
    /// Block edge lengths; 0 means "one block covering the sequence".
    pub blocks: Vec<usize>,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub tol: f64,
    pub softmax_lambda: f64,
    pub softmax_tol: f64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            sizes: vec![(64, 8)],
            blocks: vec![1, 7, 0],
            lambda: 0.5,
            seeds: vec![1, 2, 3],
            tol: 1e-6,
            softmax_lambda: 1e12,
            softmax_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquivRow {
    pub check: &'static str,
    pub n: usize,
    pub d: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub lambda: f64,
    pub seed: u64,
    pub max_abs_dev: f64,
    pub tol: f64,
}

impl EquivRow {
    pub fn pass(&self) -> bool {
        self.max_abs_dev <= self.tol
    }
}

#[derive(Debug, Clone)]
pub struct EquivReport {
    pub rows: Vec<EquivRow>,
}

impl EquivReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(EquivRow::pass)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec![
            "check",
            "n",
            "d",
            "block_rows",
            "block_cols",
            "lambda",
            "seed",
            "max_abs_dev",
            "tol",
            "pass",
        ]);
        for r in &self.rows {
            t.push(vec![
                Cell::Str(r.check.to_string()),
                Cell::Int(r.n as i64),
                Cell::Int(r.d as i64),
                Cell::Int(r.block_rows as i64),
                Cell::Int(r.block_cols as i64),
                Cell::Float(r.lambda),
                Cell::Int(r.seed as i64),
                Cell::Float(r.max_abs_dev),
                Cell::Float(r.tol),
                Cell::Str(if r.pass() { "yes" } else { "no" }.into()),
            ]);
        }
        t
    }
}

fn base_cfg(d: usize, lambda: f64) -> LLAConfig {
    let mut cfg = LLAConfig::new(d).with_lambda(lambda);
    cfg.cg.max_iters = d;
    cfg.cg.tol = 1e-10;
    cfg
}

pub fn run_equiv(cfg: &EquivConfig) -> Result<EquivReport> {
    let mut rows = Vec::new();
    for &(n, d) in &cfg.sizes {
        for &seed in &cfg.seeds {
            let q = randn(n, d, seed, 0);
            let k = randn(n, d, seed, 1);
            let v = randn(n, d, seed, 2);
            let reference = lla_forward_naive(&q, &k, &v, &base_cfg(d, cfg.lambda))?.0;
            for &b in &cfg.blocks {
                let edge = if b == 0 { n } else { b };
                let mut c = base_cfg(d, cfg.lambda);
                c.block_rows = edge;
                c.block_cols = edge;
                let o = lla_forward_blockwise(&q, &k, &v, &c)?.0;
                rows.push(EquivRow {
                    check: "blockwise-vs-naive",
                    n,
                    d,
                    block_rows: edge,
                    block_cols: edge,
                    lambda: cfg.lambda,
                    seed,
                    max_abs_dev: o.max_abs_diff(&reference),
                    tol: cfg.tol,
                });
            }
            // Large-ridge limit against the local constant estimator.
            let c = base_cfg(d, cfg.softmax_lambda);
            let o = lla_forward_blockwise(&q, &k, &v, &c)?.0;
            let sm = softmax_attention(&q, &k, &v, c.h, true)?;
            rows.push(EquivRow {
                check: "softmax-limit",
                n,
                d,
                block_rows: c.block_rows,
                block_cols: c.block_cols,
                lambda: cfg.softmax_lambda,
                seed,
                max_abs_dev: o.max_abs_diff(&sm),
                tol: cfg.softmax_tol,
            });
        }
    }
    Ok(EquivReport { rows })
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub tol_qk: f64,
    pub tol_v: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            n: 6,
            d: 4,
            lambda: 0.5,
            seeds: vec![1, 2, 3, 4, 5],
            tol_qk: 1e-4,
            tol_v: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradRow {
    pub tensor: &'static str,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradRow {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(GradRow::pass)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["tensor", "n", "d", "seed", "max_rel_err", "tol", "pass"]);
        for r in &self.rows {
            t.push(vec![
                Cell::Str(r.tensor.to_string()),
                Cell::Int(r.n as i64),
                Cell::Int(r.d as i64),
                Cell::Int(r.seed as i64),
                Cell::Float(r.max_rel_err),
                Cell::Float(r.tol),
                Cell::Str(if r.pass() { "yes" } else { "no" }.into()),
            ]);
        }
        t
    }
}

fn loss(q: &Matrix, k: &Matrix, v: &Matrix, d_out: &Matrix, cfg: &LLAConfig) -> f64 {
    let (o, _) = lla_forward_naive(q, k, v, cfg).expect("forward in finite differences");
    o.data().iter().zip(d_out.data()).map(|(a, b)| a * b).sum()
}

fn central_fd(x: &Matrix, step: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + step);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - step);
            out.set(i, j, (f(&plus) - f(&minus)) / (2.0 * step));
        }
    }
    out
}

fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let denom = x.abs().max(y.abs()).max(1e-6);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let n = cfg.n;
        let d = cfg.d;
        let q = randn(n, d, seed, 10);
        let k = randn(n, d, seed, 11);
        let v = randn(n, d, seed, 12);
        let d_out = randn(n, d, seed, 13);
        let mut lcfg = LLAConfig::new(d).with_lambda(cfg.lambda);
        lcfg.block_rows = 3;
        let (_, cache) = lla_forward_naive(&q, &k, &v, &lcfg)?;
        let mut bcfg = lcfg.clone();
        bcfg.cg.max_iters = 2 * d;
        bcfg.cg.tol = 1e-13;
        let (grads, _) = lla_backward(&q, &k, &v, &cache, &d_out, &bcfg)?;

        let fd_q = central_fd(&q, 1e-5, |m| loss(m, &k, &v, &d_out, &lcfg));
        let fd_k = central_fd(&k, 1e-5, |m| loss(&q, m, &v, &d_out, &lcfg));
        // The value path is linear; a larger step only reduces cancellation.
        let fd_v = central_fd(&v, 1e-2, |m| loss(&q, &k, m, &d_out, &lcfg));
        rows.push(GradRow {
            tensor: "dQ",
            n,
            d,
            seed,
            max_rel_err: max_rel(&grads.dq, &fd_q),
            tol: cfg.tol_qk,
        });
        rows.push(GradRow {
            tensor: "dK",
            n,
            d,
            seed,
            max_rel_err: max_rel(&grads.dk, &fd_k),
            tol: cfg.tol_qk,
        });
        rows.push(GradRow {
            tensor: "dV",
            n,
            d,
            seed,
            max_rel_err: max_rel(&grads.dv, &fd_v),
            tol: cfg.tol_v,
        });
    }
    Ok(GradReport { rows })
}
