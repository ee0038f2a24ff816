//! Peak-auxiliary-memory scaling of the two forward paths. The naive path
//! materializes the pairwise differences and the weight matrix (quadratic
//! in sequence length); the blockwise path keeps a per-block weight stripe
//! plus linear statistics.
//!
//! Bytes are measured with the process-wide counting allocator when one is
//! installed; otherwise the measured column is left empty and the slope
//! check falls back to the analytic size model.

use std::time::Instant;

use anyhow::Result;
use lla_core::lla::{lla_forward_blockwise, lla_forward_naive, LLAConfig};

use crate::allocmeter;
use crate::formats::{Cell, Table};

use super::loglog_slope;
use super::verify::randn;

pub const BLOCKWISE_SLOPE_BAND: (f64, f64) = (0.7, 1.3);
pub const NAIVE_SLOPE_BAND: (f64, f64) = (1.7, 2.3);

#[derive(Debug, Clone)]
pub struct BenchMemConfig {
    pub dims: Vec<usize>,
    pub naive_ns: Vec<usize>,
    pub block_ns: Vec<usize>,
    pub block_rows: usize,
    pub block_cols: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Iteration budget for the blockwise CG; memory does not depend on it.
    pub cg_iters: usize,
}

impl Default for BenchMemConfig {
    fn default() -> Self {
        BenchMemConfig {
            dims: vec![32, 128],
            naive_ns: vec![128, 256, 512],
            block_ns: vec![512, 1024, 2048, 4096],
            block_rows: 64,
            block_cols: 64,
            lambda: 1.0,
            seed: 0,
            cg_iters: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub path: &'static str,
    pub n: usize,
    pub d: usize,
    pub measured: Option<usize>,
    pub analytic: usize,
    pub wall: f64,
}

impl BenchRow {
    pub fn bytes_for_fit(&self) -> f64 {
        self.measured.unwrap_or(self.analytic) as f64
    }
}

#[derive(Debug, Clone)]
pub struct SlopeRow {
    pub path: &'static str,
    pub d: usize,
    pub slope: f64,
    pub band: (f64, f64),
}

impl SlopeRow {
    pub fn pass(&self) -> bool {
        self.slope >= self.band.0 && self.slope <= self.band.1
    }
}

#[derive(Debug, Clone)]
pub struct BenchMemReport {
    pub rows: Vec<BenchRow>,
    pub slopes: Vec<SlopeRow>,
    /// Blockwise peak at the largest blockwise n stays below the naive peak
    /// at the largest naive n, at the largest dimension.
    pub crossover_ok: bool,
    pub instrumented: bool,
}

impl BenchMemReport {
    pub fn pass(&self) -> bool {
        self.crossover_ok && self.slopes.iter().all(SlopeRow::pass)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["path", "n", "d", "peak_aux_bytes", "wall_time"]);
        for r in &self.rows {
            t.push(vec![
                Cell::Str(r.path.to_string()),
                Cell::Int(r.n as i64),
                Cell::Int(r.d as i64),
                match r.measured {
                    Some(b) => Cell::Int(b as i64),
                    None => Cell::Missing,
                },
                Cell::Float(r.wall),
            ]);
        }
        t
    }
}

/// Analytic auxiliary-byte model of the naive forward: ragged pairwise
/// difference tensor, full weight matrix, and the linear caches.
fn naive_analytic(n: usize, d: usize) -> usize {
    let pairs = n * (n + 1) / 2;
    8 * (pairs * d + n * n + 6 * n * d + d * d + 4 * n)
}

/// Analytic model of the blockwise forward: logit stripe for one query
/// block, CG workspace (iterate, best iterate, residual, direction, basis)
/// per block, and the sequence-level caches.
fn blockwise_analytic(n: usize, d: usize, block_rows: usize, cg_iters: usize) -> usize {
    let stripe = block_rows.min(n) * n;
    let cg = block_rows.min(n) * d * (cg_iters + 4);
    8 * (stripe + cg + 9 * n * d + 5 * n)
}

pub fn run_benchmem(cfg: &BenchMemConfig) -> Result<BenchMemReport> {
    let instrumented = allocmeter::instrumentation_active();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &d in &cfg.dims {
        let mut naive_pts = Vec::new();
        for &n in &cfg.naive_ns {
            let q = randn(n, d, cfg.seed ^ n as u64, 0);
            let k = randn(n, d, cfg.seed ^ n as u64, 1);
            let v = randn(n, d, cfg.seed ^ n as u64, 2);
            let lcfg = LLAConfig::new(d).with_lambda(cfg.lambda);
            let start = Instant::now();
            let (out, peak) = allocmeter::measure_peak(|| lla_forward_naive(&q, &k, &v, &lcfg));
            out?;
            let wall = start.elapsed().as_secs_f64();
            let row = BenchRow {
                path: "naive",
                n,
                d,
                measured: instrumented.then_some(peak),
                analytic: naive_analytic(n, d),
                wall,
            };
            naive_pts.push((n as f64, row.bytes_for_fit()));
            rows.push(row);
        }
        slopes.push(SlopeRow {
            path: "naive",
            d,
            slope: loglog_slope(&naive_pts),
            band: NAIVE_SLOPE_BAND,
        });

        let mut block_pts = Vec::new();
        for &n in &cfg.block_ns {
            let q = randn(n, d, cfg.seed ^ n as u64, 3);
            let k = randn(n, d, cfg.seed ^ n as u64, 4);
            let v = randn(n, d, cfg.seed ^ n as u64, 5);
            let mut lcfg = LLAConfig::new(d).with_lambda(cfg.lambda);
            lcfg.block_rows = cfg.block_rows;
            lcfg.block_cols = cfg.block_cols;
            lcfg.cg.max_iters = cfg.cg_iters;
            let start = Instant::now();
            let (out, peak) = allocmeter::measure_peak(|| lla_forward_blockwise(&q, &k, &v, &lcfg));
            out?;
            let wall = start.elapsed().as_secs_f64();
            let row = BenchRow {
                path: "blockwise",
                n,
                d,
                measured: instrumented.then_some(peak),
                analytic: blockwise_analytic(n, d, cfg.block_rows, cfg.cg_iters),
                wall,
            };
            block_pts.push((n as f64, row.bytes_for_fit()));
            rows.push(row);
        }
        slopes.push(SlopeRow {
            path: "blockwise",
            d,
            slope: loglog_slope(&block_pts),
            band: BLOCKWISE_SLOPE_BAND,
        });
    }

    // Crossover at the largest dimension: the blockwise path at its largest
    // n must use less memory than the naive path at its largest (smaller) n.
    let d_top = *cfg.dims.iter().max().unwrap();
    let naive_top = rows
        .iter()
        .filter(|r| r.path == "naive" && r.d == d_top)
        .max_by_key(|r| r.n)
        .map(|r| r.bytes_for_fit());
    let block_top = rows
        .iter()
        .filter(|r| r.path == "blockwise" && r.d == d_top)
        .max_by_key(|r| r.n)
        .map(|r| r.bytes_for_fit());
    let crossover_ok = match (naive_top, block_top) {
        (Some(nv), Some(bv)) => bv < nv,
        _ => false,
    };

    Ok(BenchMemReport {
        rows,
        slopes,
        crossover_ok,
        instrumented,
    })
}
