//! Test-time regression on the piecewise-linear task, and the derived
//! total-MSE ratios.
//!
//! Queries are the keys themselves under the standard causal mask: the
//! prediction for position `i` is the model output with `q_i = k_i`
//! attending pairs `j <= i`, and the position-wise loss is
//! `||f(k_i) - v_i||^2`. Retrieving the stored value at the query key is
//! exactly the associative-recall reading of the task; `strict_prior`
//! switches to leave-one-out causality (context `j < i`, zero prediction at
//! position 1) for estimator-style evaluation.

use anyhow::{bail, Result};
use lla_core::baselines::{mesanet, softmax_attention, vanilla_la};
use lla_core::cg::Lambda;
use lla_core::datagen::{gen_sequence, stream_rng, Gaussian, PiecewiseLinearTask};
use lla_core::lla::{lla_forward_blockwise, LLAConfig};
use lla_core::tensor::Matrix;

use crate::formats::{Cell, Table};

use super::{mean, stderr, thread_pool};

/// Stream slot reserved for the input-independent random predictor (segment
/// slots count up from 0).
const RANDOM_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lla,
    Softmax,
    VanillaLa,
    Mesanet,
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Lla,
        ModelKind::Softmax,
        ModelKind::VanillaLa,
        ModelKind::Mesanet,
        ModelKind::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lla => "lla",
            ModelKind::Softmax => "softmax",
            ModelKind::VanillaLa => "vanilla-la",
            ModelKind::Mesanet => "mesanet",
            ModelKind::Random => "random",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lla" => ModelKind::Lla,
            "softmax" => ModelKind::Softmax,
            "vanilla-la" | "la" => ModelKind::VanillaLa,
            "mesanet" => ModelKind::Mesanet,
            "random" => ModelKind::Random,
            other => bail!("unknown model {other:?}"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TtrConfig {
    pub length: usize,
    pub segments: Vec<usize>,
    pub dims: Vec<usize>,
    pub noise: f64,
    pub models: Vec<ModelKind>,
    pub reps: usize,
    pub seed: u64,
    /// Kernel bandwidth; `None` means `2 sqrt(d)` per dimension.
    pub bandwidth: Option<f64>,
    pub lambda: f64,
    pub cg_iters: Option<usize>,
    pub cg_tol: f64,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Leave-one-out causality: context `j < i` instead of `j <= i`.
    pub strict_prior: bool,
    pub threads: Option<usize>,
}

impl Default for TtrConfig {
    fn default() -> Self {
        TtrConfig {
            length: 1024,
            segments: vec![256],
            dims: vec![64],
            noise: 0.1,
            models: ModelKind::ALL.to_vec(),
            reps: 500,
            seed: 0,
            bandwidth: None,
            lambda: 1.0,
            cg_iters: None,
            cg_tol: 1e-6,
            block_rows: 64,
            block_cols: 64,
            strict_prior: false,
            threads: None,
        }
    }
}

impl TtrConfig {
    pub fn lla_config(&self, d: usize) -> LLAConfig {
        let mut cfg = LLAConfig::new(d);
        if let Some(h) = self.bandwidth {
            cfg.h = h;
        }
        cfg.lambda = Lambda::Scalar(self.lambda);
        if let Some(t) = self.cg_iters {
            cfg.cg.max_iters = t;
        }
        cfg.cg.tol = self.cg_tol;
        cfg.block_rows = self.block_rows;
        cfg.block_cols = self.block_cols;
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.length < 2 {
            bail!("length must be >= 2");
        }
        if self.reps == 0 {
            bail!("reps must be >= 1");
        }
        if self.models.is_empty() {
            bail!("at least one model required");
        }
        Ok(())
    }
}

/// Aggregates for one `(model, d, S)` cell.
#[derive(Debug, Clone)]
pub struct TtrCell {
    pub model: ModelKind,
    pub d: usize,
    pub segment: usize,
    pub mse_mean: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    /// Per-replication total MSE (summed over positions), kept for paired
    /// ratio statistics.
    pub rep_totals: Vec<f64>,
}

impl TtrCell {
    /// Mean of `mse_mean` over a 1-based inclusive position range.
    pub fn mean_over_positions(&self, from: usize, to: usize) -> f64 {
        let slice = &self.mse_mean[from - 1..to];
        mean(slice)
    }
}

#[derive(Debug, Clone)]
pub struct TtrReport {
    pub length: usize,
    pub reps: usize,
    pub cells: Vec<TtrCell>,
}

impl TtrReport {
    pub fn cell(&self, model: ModelKind, d: usize, segment: usize) -> Option<&TtrCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.d == d && c.segment == segment)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec![
            "model",
            "d",
            "S",
            "position",
            "mse_mean",
            "mse_stderr",
            "n_reps",
        ]);
        for cell in &self.cells {
            for pos in 0..self.length {
                t.push(vec![
                    Cell::Str(cell.model.name().to_string()),
                    Cell::Int(cell.d as i64),
                    Cell::Int(cell.segment as i64),
                    Cell::Int(pos as i64 + 1),
                    Cell::Float(cell.mse_mean[pos]),
                    Cell::Float(cell.mse_stderr[pos]),
                    Cell::Int(self.reps as i64),
                ]);
            }
        }
        t
    }
}

/// Position-wise losses of every requested model on one sequence.
fn eval_sequence(
    task: &PiecewiseLinearTask,
    rep: u64,
    models: &[ModelKind],
    cfg: &TtrConfig,
) -> Result<Vec<Vec<f64>>> {
    let seq = gen_sequence(task, rep)?;
    let l = task.length;
    let d = task.dim;
    // Inclusive mode attends j <= i with q_i = k_i; strict-prior mode
    // shifts the context so position i sees only j < i.
    let (q, k_ctx, v_ctx) = if cfg.strict_prior {
        (
            seq.keys.row_block(1, l),
            seq.keys.row_block(0, l - 1),
            seq.values.row_block(0, l - 1),
        )
    } else {
        (seq.keys.clone(), seq.keys.clone(), seq.values.clone())
    };
    let lla_cfg = cfg.lla_config(d);

    let mut out = Vec::with_capacity(models.len());
    for model in models {
        let mut losses = vec![0.0; l];
        let preds: Option<Matrix> = match model {
            ModelKind::Lla => Some(lla_forward_blockwise(&q, &k_ctx, &v_ctx, &lla_cfg)?.0),
            ModelKind::Softmax => Some(softmax_attention(&q, &k_ctx, &v_ctx, lla_cfg.h, true)?),
            ModelKind::VanillaLa => Some(vanilla_la(&q, &k_ctx, &v_ctx, true)?),
            ModelKind::Mesanet => Some(mesanet(&q, &k_ctx, &v_ctx, cfg.lambda, true)?),
            ModelKind::Random => None,
        };
        match preds {
            Some(preds) => {
                let off = if cfg.strict_prior { 1 } else { 0 };
                if cfg.strict_prior {
                    // Empty-context position: prediction is zero.
                    losses[0] = seq.values.row(0).iter().map(|v| v * v).sum();
                }
                for pos in off..l {
                    let p = preds.row(pos - off);
                    let v = seq.values.row(pos);
                    losses[pos] = p
                        .iter()
                        .zip(v)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                }
            }
            None => {
                let mut rng = stream_rng(task.seed, rep, RANDOM_SLOT);
                let mut g = Gaussian::new();
                let mut draw = vec![0.0; d];
                for pos in 0..l {
                    g.fill(&mut rng, &mut draw);
                    let v = seq.values.row(pos);
                    losses[pos] = draw
                        .iter()
                        .zip(v)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                }
            }
        }
        out.push(losses);
    }
    Ok(out)
}

pub fn run_ttr(cfg: &TtrConfig) -> Result<TtrReport> {
    cfg.validate()?;
    let pool = thread_pool(cfg.threads)?;
    let mut cells = Vec::new();
    for &d in &cfg.dims {
        for &s in &cfg.segments {
            let task = PiecewiseLinearTask::new(cfg.length, s, d, cfg.noise, cfg.seed)?;
            // One entry per rep, indexed, so the reduction order is fixed
            // regardless of scheduling.
            let per_rep: Vec<Result<Vec<Vec<f64>>>> = pool.install(|| {
                use rayon::prelude::*;
                (0..cfg.reps as u64)
                    .into_par_iter()
                    .map(|rep| eval_sequence(&task, rep, &cfg.models, cfg))
                    .collect()
            });
            let mut rep_losses: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.reps);
            for r in per_rep {
                rep_losses.push(r?);
            }
            for (mi, model) in cfg.models.iter().enumerate() {
                let mut mse_mean = vec![0.0; cfg.length];
                let mut mse_stderr = vec![0.0; cfg.length];
                let mut rep_totals = Vec::with_capacity(cfg.reps);
                for rep in &rep_losses {
                    rep_totals.push(rep[mi].iter().sum::<f64>());
                }
                let mut column = vec![0.0; cfg.reps];
                for pos in 0..cfg.length {
                    for (r, rep) in rep_losses.iter().enumerate() {
                        column[r] = rep[mi][pos];
                    }
                    mse_mean[pos] = mean(&column);
                    mse_stderr[pos] = stderr(&column);
                }
                cells.push(TtrCell {
                    model: *model,
                    d,
                    segment: s,
                    mse_mean,
                    mse_stderr,
                    rep_totals,
                });
            }
        }
    }
    Ok(TtrReport {
        length: cfg.length,
        reps: cfg.reps,
        cells,
    })
}

/// Total-MSE ratios against the LLA cell of the same `(d, S)`.
#[derive(Debug, Clone)]
pub struct RatioRow {
    pub model: ModelKind,
    pub d: usize,
    pub segment: usize,
    pub ratio: f64,
    /// Standard error of the paired per-replication ratios.
    pub ratio_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
}

impl RatioReport {
    pub fn row(&self, model: ModelKind, d: usize, segment: usize) -> Option<&RatioRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.d == d && r.segment == segment)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["model", "d", "S", "ratio"]);
        for r in &self.rows {
            t.push(vec![
                Cell::Str(r.model.name().to_string()),
                Cell::Int(r.d as i64),
                Cell::Int(r.segment as i64),
                Cell::Float(r.ratio),
            ]);
        }
        t
    }
}

pub fn run_ratio(cfg: &TtrConfig) -> Result<RatioReport> {
    let mut cfg = cfg.clone();
    if !cfg.models.contains(&ModelKind::Lla) {
        cfg.models.push(ModelKind::Lla);
    }
    let report = run_ttr(&cfg)?;
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        for &s in &cfg.segments {
            let lla = report
                .cell(ModelKind::Lla, d, s)
                .expect("lla cell present");
            let lla_total = mean(&lla.rep_totals);
            for model in &cfg.models {
                let cell = report.cell(*model, d, s).unwrap();
                let ratio = mean(&cell.rep_totals) / lla_total;
                let paired: Vec<f64> = cell
                    .rep_totals
                    .iter()
                    .zip(&lla.rep_totals)
                    .map(|(m, l)| m / l)
                    .collect();
                rows.push(RatioRow {
                    model: *model,
                    d,
                    segment: s,
                    ratio,
                    ratio_stderr: stderr(&paired),
                });
            }
        }
    }
    Ok(RatioReport { rows })
}
