//! Experiment drivers behind the CLI subcommands. Each returns a report
//! struct the acceptance suite can interrogate directly; tables for CSV or
//! JSON output come from the report.

pub mod benchmem;
pub mod ratecheck;
pub mod ttr;
pub mod verify;

use anyhow::{Context, Result};

/// Build the worker pool: explicit `threads` wins, then the `LLA_THREADS`
/// environment variable, then rayon's default.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut n = threads;
    if n.is_none() {
        if let Ok(v) = std::env::var("LLA_THREADS") {
            let parsed = v
                .trim()
                .parse::<usize>()
                .with_context(|| format!("LLA_THREADS={v:?} is not a thread count"))?;
            n = Some(parsed.max(1));
        }
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Ordinary least squares slope of `ln(y)` against `ln(x)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample std / sqrt(n); 0 for n < 2).
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}
