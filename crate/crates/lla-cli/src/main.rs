//! `lla` command line: synthetic data generation, the training-free
//! experiments, and the verification suites. Verification subcommands exit
//! nonzero iff a tolerance is breached.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use lla_cli::config::FileConfig;
use lla_cli::experiments::benchmem::{run_benchmem, BenchMemConfig};
use lla_cli::experiments::ratecheck::{run_ratecheck, Estimator, RateCheckConfig};
use lla_cli::experiments::ttr::{run_ratio, run_ttr, ModelKind, TtrConfig};
use lla_cli::experiments::verify::{run_equiv, run_gradcheck, EquivConfig, GradCheckConfig};
use lla_cli::formats::{sequence_to_csv, write_sequence_binary, OutputFormat};
use lla_core::datagen::{gen_sequence, PiecewiseLinearTask};

#[global_allocator]
static ALLOC: lla_cli::allocmeter::CountingAllocator = lla_cli::allocmeter::CountingAllocator;

#[derive(Parser)]
#[command(
    name = "lla",
    about = "Local linear attention: synthetic experiments and verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a piecewise-linear sequence (columnar CSV or LLA1 binary).
    GenData(GenDataArgs),
    /// Test-time regression: position-wise MSE per model.
    Ttr(SweepArgs),
    /// Total-MSE ratio of each model against LLA.
    Ratio(SweepArgs),
    /// Empirical convergence-rate check of GL/NW/LL estimators.
    Ratecheck(RatecheckArgs),
    /// Blockwise-vs-naive equivalence and the softmax limit.
    Equiv(EquivArgs),
    /// Analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Peak auxiliary memory scaling of the two forward paths.
    BenchMem(BenchMemArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Optional key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv or json.
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Worker threads (also settable via LLA_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn file(&self) -> Result<FileConfig> {
        FileConfig::load(self.config.as_deref())
    }

    fn format_or(&self, file: &FileConfig) -> Result<OutputFormat> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        Ok(file.get::<String>("format")?.map(|s| s.parse()).transpose()?.unwrap_or(OutputFormat::Csv))
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    segment: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Replication index selecting the sample stream.
    #[arg(long)]
    sample: Option<u64>,
    /// Sequence format: csv or bin.
    #[arg(long, default_value = "csv")]
    data_format: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    length: Option<usize>,
    /// Comma-separated segment sizes.
    #[arg(long, value_delimiter = ',')]
    segment: Option<Vec<usize>>,
    /// Comma-separated input dimensions.
    #[arg(long, value_delimiter = ',')]
    dim: Option<Vec<usize>>,
    #[arg(long)]
    noise: Option<f64>,
    /// Comma-separated models: lla,softmax,vanilla-la,mesanet,random.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cg_iters: Option<usize>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    block_rows: Option<usize>,
    #[arg(long)]
    block_cols: Option<usize>,
    /// Leave-one-out causality (context j < i) instead of standard causal.
    #[arg(long)]
    strict_prior: bool,
}

impl SweepArgs {
    fn build(&self) -> Result<(TtrConfig, FileConfig)> {
        let file = self.common.file()?;
        let defaults = TtrConfig::default();
        let models = match self
            .models
            .clone()
            .or(file.get_list::<String>("models")?)
        {
            Some(names) => {
                let mut ms = Vec::new();
                for name in names {
                    ms.push(name.parse::<ModelKind>()?);
                }
                ms
            }
            None => defaults.models.clone(),
        };
        let cfg = TtrConfig {
            length: self.length.or(file.get("length")?).unwrap_or(defaults.length),
            segments: self
                .segment
                .clone()
                .or(file.get_list("segment")?)
                .unwrap_or(defaults.segments.clone()),
            dims: self
                .dim
                .clone()
                .or(file.get_list("dim")?)
                .unwrap_or(defaults.dims.clone()),
            noise: self.noise.or(file.get("noise")?).unwrap_or(defaults.noise),
            models,
            reps: self.reps.or(file.get("reps")?).unwrap_or(defaults.reps),
            seed: self.common.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
            bandwidth: self.bandwidth.or(file.get("bandwidth")?),
            lambda: self.lambda.or(file.get("lambda")?).unwrap_or(defaults.lambda),
            cg_iters: self.cg_iters.or(file.get("cg-iters")?),
            cg_tol: self.cg_tol.or(file.get("cg-tol")?).unwrap_or(defaults.cg_tol),
            block_rows: self
                .block_rows
                .or(file.get("block-rows")?)
                .unwrap_or(defaults.block_rows),
            block_cols: self
                .block_cols
                .or(file.get("block-cols")?)
                .unwrap_or(defaults.block_cols),
            strict_prior: self.strict_prior
                || file.get::<bool>("strict-prior")?.unwrap_or(false),
            threads: self.common.threads.or(file.get("threads")?),
        };
        Ok((cfg, file))
    }
}

#[derive(Args)]
struct RatecheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated training sample sizes (default 128..8192 geometric).
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Monte-Carlo integration points.
    #[arg(long)]
    mc_points: Option<usize>,
}

#[derive(Args)]
struct EquivArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Block edge lengths to test; 0 means one block over the sequence.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    /// Number of random instances.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of random instances.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct BenchMemArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    dim: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    naive_ns: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    block_ns: Option<Vec<usize>>,
    #[arg(long)]
    block_rows: Option<usize>,
    #[arg(long)]
    block_cols: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cg_iters: Option<usize>,
}

fn main() {
    let code = match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run() -> Result<i32> {
    match Cli::parse().cmd {
        Cmd::GenData(args) => {
            let file = args.common.file()?;
            let length = args.length.or(file.get("length")?).unwrap_or(1024);
            let segment = args.segment.or(file.get("segment")?).unwrap_or(256);
            let dim = args.dim.or(file.get("dim")?).unwrap_or(64);
            let noise = args.noise.or(file.get("noise")?).unwrap_or(0.1);
            let seed = args.common.seed.or(file.get("seed")?).unwrap_or(0);
            let sample = args.sample.or(file.get("sample")?).unwrap_or(0);
            let task = PiecewiseLinearTask::new(length, segment, dim, noise, seed)?;
            let seq = gen_sequence(&task, sample)?;
            match args.data_format.as_str() {
                "csv" => {
                    let body = sequence_to_csv(&seq);
                    match &args.common.out {
                        Some(p) => std::fs::write(p, body)?,
                        None => print!("{body}"),
                    }
                }
                "bin" => {
                    let Some(path) = &args.common.out else {
                        bail!("--out is required for binary output");
                    };
                    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
                    write_sequence_binary(&mut f, &seq, segment, seed, sample)?;
                }
                other => bail!("unknown data format {other:?} (expected csv or bin)"),
            }
            Ok(0)
        }
        Cmd::Ttr(args) => {
            let (cfg, file) = args.build()?;
            let format = args.common.format_or(&file)?;
            let report = run_ttr(&cfg)?;
            report.to_table().write(args.common.out.as_deref(), format)?;
            Ok(0)
        }
        Cmd::Ratio(args) => {
            let (cfg, file) = args.build()?;
            let format = args.common.format_or(&file)?;
            let report = run_ratio(&cfg)?;
            report.to_table().write(args.common.out.as_deref(), format)?;
            Ok(0)
        }
        Cmd::Ratecheck(args) => {
            let file = args.common.file()?;
            let format = args.common.format_or(&file)?;
            let defaults = RateCheckConfig::default();
            let cfg = RateCheckConfig {
                n_grid: args
                    .n_grid
                    .or(file.get_list("n-grid")?)
                    .unwrap_or(defaults.n_grid.clone()),
                reps: args.reps.or(file.get("reps")?).unwrap_or(defaults.reps),
                noise: args.noise.or(file.get("noise")?).unwrap_or(defaults.noise),
                mc_points: args
                    .mc_points
                    .or(file.get("mc-points")?)
                    .unwrap_or(defaults.mc_points),
                seed: args.common.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
                threads: args.common.threads.or(file.get("threads")?),
                ..defaults
            };
            let report = run_ratecheck(&cfg)?;
            for est in Estimator::ALL {
                eprintln!(
                    "{}: log-log slope {:.4}, level at n={} is {:.6e}",
                    est.name(),
                    report.slope(est),
                    cfg.n_grid.iter().max().unwrap(),
                    report.level_at_largest_n(est)
                );
            }
            report.to_table().write(args.common.out.as_deref(), format)?;
            Ok(0)
        }
        Cmd::Equiv(args) => {
            let file = args.common.file()?;
            let format = args.common.format_or(&file)?;
            let defaults = EquivConfig::default();
            let n = args.length.or(file.get("length")?).unwrap_or(64);
            let d = args.dim.or(file.get("dim")?).unwrap_or(8);
            let reps = args.reps.or(file.get("reps")?).unwrap_or(3);
            let seed0 = args.common.seed.or(file.get("seed")?).unwrap_or(1);
            let cfg = EquivConfig {
                sizes: vec![(n, d)],
                blocks: args
                    .blocks
                    .or(file.get_list("blocks")?)
                    .unwrap_or(defaults.blocks.clone()),
                lambda: args.lambda.or(file.get("lambda")?).unwrap_or(defaults.lambda),
                seeds: (0..reps as u64).map(|r| seed0 + r).collect(),
                ..defaults
            };
            let report = run_equiv(&cfg)?;
            report.to_table().write(args.common.out.as_deref(), format)?;
            for row in &report.rows {
                eprintln!(
                    "{} n={} d={} blocks=({},{}) lambda={} seed={}: max|dev|={:.3e} tol={:.0e} {}",
                    row.check,
                    row.n,
                    row.d,
                    row.block_rows,
                    row.block_cols,
                    row.lambda,
                    row.seed,
                    row.max_abs_dev,
                    row.tol,
                    if row.pass() { "ok" } else { "FAIL" }
                );
            }
            Ok(if report.pass() { 0 } else { 1 })
        }
        Cmd::Gradcheck(args) => {
            let file = args.common.file()?;
            let format = args.common.format_or(&file)?;
            let defaults = GradCheckConfig::default();
            let reps = args.reps.or(file.get("reps")?).unwrap_or(5);
            let seed0 = args.common.seed.or(file.get("seed")?).unwrap_or(1);
            let cfg = GradCheckConfig {
                n: args.length.or(file.get("length")?).unwrap_or(defaults.n),
                d: args.dim.or(file.get("dim")?).unwrap_or(defaults.d),
                lambda: args.lambda.or(file.get("lambda")?).unwrap_or(defaults.lambda),
                seeds: (0..reps as u64).map(|r| seed0 + r).collect(),
                ..defaults
            };
            let report = run_gradcheck(&cfg)?;
            report.to_table().write(args.common.out.as_deref(), format)?;
            for row in &report.rows {
                eprintln!(
                    "{} n={} d={} seed={}: max rel err {:.3e} tol {:.0e} {}",
                    row.tensor,
                    row.n,
                    row.d,
                    row.seed,
                    row.max_rel_err,
                    row.tol,
                    if row.pass() { "ok" } else { "FAIL" }
                );
            }
            Ok(if report.pass() { 0 } else { 1 })
        }
        Cmd::BenchMem(args) => {
            let file = args.common.file()?;
            let format = args.common.format_or(&file)?;
            let defaults = BenchMemConfig::default();
            let cfg = BenchMemConfig {
                dims: args
                    .dim
                    .or(file.get_list("dim")?)
                    .unwrap_or(defaults.dims.clone()),
                naive_ns: args
                    .naive_ns
                    .or(file.get_list("naive-ns")?)
                    .unwrap_or(defaults.naive_ns.clone()),
                block_ns: args
                    .block_ns
                    .or(file.get_list("block-ns")?)
                    .unwrap_or(defaults.block_ns.clone()),
                block_rows: args
                    .block_rows
                    .or(file.get("block-rows")?)
                    .unwrap_or(defaults.block_rows),
                block_cols: args
                    .block_cols
                    .or(file.get("block-cols")?)
                    .unwrap_or(defaults.block_cols),
                lambda: args.lambda.or(file.get("lambda")?).unwrap_or(defaults.lambda),
                seed: args.common.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
                cg_iters: args.cg_iters.or(file.get("cg-iters")?).unwrap_or(defaults.cg_iters),
            };
            let report = run_benchmem(&cfg)?;
            report.to_table().write(args.common.out.as_deref(), format)?;
            if !report.instrumented {
                eprintln!("allocation instrumentation unavailable; slopes use the analytic model");
            }
            for s in &report.slopes {
                eprintln!(
                    "{} d={}: slope {:.3} band [{}, {}] {}",
                    s.path,
                    s.d,
                    s.slope,
                    s.band.0,
                    s.band.1,
                    if s.pass() { "ok" } else { "FAIL" }
                );
            }
            eprintln!(
                "crossover (blockwise max-n below naive max-n at top dim): {}",
                if report.crossover_ok { "ok" } else { "FAIL" }
            );
            Ok(if report.pass() { 0 } else { 1 })
        }
    }
}
