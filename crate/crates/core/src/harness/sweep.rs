//! Worker-count sweeps for the linear-speedup check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use std::path::Path;

use super::runner::{run_in_memory, run_recorded};
use crate::dist::step_limit;
use crate::error::{Error, Result};
use crate::problems::build_problem;

/// Aggregates over replicates for one worker count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub workers: usize,
    /// `min(base η, step limit)` for this worker count.
    pub eta: f64,
    pub replicates: usize,
    pub mean_grad_norm_sq: f64,
    pub mean_grad_norm_sq_stderr: f64,
    /// Mean `grad_norm_sq` over the second half of the rounds.
    pub plateau: f64,
    pub plateau_stderr: f64,
    /// Total upload bits of one run.
    pub bits_up: u64,
    pub diverged_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `ln plateau` against `ln M`.
    pub plateau_slope: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

struct Replicate {
    workers: usize,
    mean: f64,
    plateau: f64,
    bits_up: u64,
    diverged: bool,
}

/// Runs `replicates` seeds (`base seed + index`) per worker count in parallel.
///
/// With `out_dir`, each run writes its files to `workers_{M}/seed_{s}/`.
pub fn speedup_sweep(
    base: &RunConfig,
    worker_counts: &[usize],
    replicates: usize,
    out_dir: Option<&Path>,
) -> Result<SweepTable> {
    if worker_counts.is_empty() || replicates == 0 {
        return Err(Error::InvalidArgument("sweep needs worker counts and at least one replicate".into()));
    }
    let lipschitz = build_problem(&base.problem)?.constants().lipschitz;
    let configs: Vec<RunConfig> = worker_counts
        .iter()
        .flat_map(|&m| {
            let eta = base.optimizer.eta.min(step_limit(base.run.batch, m, lipschitz));
            (0..replicates as u64).map(move |r| {
                let mut c = base.clone();
                c.run.workers = m;
                c.run.seed = base.run.seed.wrapping_add(r);
                c.optimizer.eta = eta;
                c
            })
        })
        .collect();

    let runs = configs
        .par_iter()
        .map(|c| {
            let (report, records) = match out_dir {
                Some(dir) => {
                    run_recorded(c, &dir.join(format!("workers_{}/seed_{}", c.run.workers, c.run.seed)))?
                }
                None => run_in_memory(c)?,
            };
            let tail = &records[records.len() / 2..];
            let plateau = tail.iter().map(|r| r.grad_norm_sq).sum::<f64>() / tail.len().max(1) as f64;
            Ok(Replicate {
                workers: c.run.workers,
                mean: report.summary.mean_grad_norm_sq,
                plateau,
                bits_up: report.summary.total_bits_up,
                diverged: report.outcome.diverged(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<SweepRow> = worker_counts
        .iter()
        .zip(runs.chunks(replicates))
        .zip(configs.chunks(replicates))
        .map(|((&m, reps), cfgs)| {
            debug_assert!(reps.iter().all(|r| r.workers == m));
            let (mean, mean_se) = mean_stderr(&reps.iter().map(|r| r.mean).collect::<Vec<_>>());
            let (plateau, plateau_se) = mean_stderr(&reps.iter().map(|r| r.plateau).collect::<Vec<_>>());
            SweepRow {
                workers: m,
                eta: cfgs[0].optimizer.eta,
                replicates,
                mean_grad_norm_sq: mean,
                mean_grad_norm_sq_stderr: mean_se,
                plateau,
                plateau_stderr: plateau_se,
                bits_up: reps[0].bits_up,
                diverged_runs: reps.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect();

    let xs: Vec<f64> = rows.iter().map(|r| r.workers as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.plateau).collect();
    let plateau_slope = if rows.len() >= 2 { loglog_slope(&xs, &ys).unwrap_or(f64::NAN) } else { f64::NAN };
    Ok(SweepTable { rows, plateau_slope })
}
