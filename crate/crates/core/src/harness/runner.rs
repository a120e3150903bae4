use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, RunConfig};
use super::metrics::{read_metrics, CsvMetrics, MetricsSink, Summary};
use crate::dist::{
    error_feedback_bound, step_limit, convergence_terms, Cluster, ConvergenceInputs, MetricsRecord,
};
use crate::error::{ensure_dim, Error, Result};
use crate::optim::{Method, OptimizerState, Sampling};
use crate::problems::{build_problem, operator_eval, ProblemConstants, SaddleProblem};
use crate::quantize::delta_lower_bound;
use crate::rng::{stream, Purpose};
use crate::vector::ParamVector;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// The iterate became non-finite or left the guard ball at `round`.
    Diverged { round: u64, reason: String },
}

impl Outcome {
    pub fn diverged(&self) -> bool {
        matches!(self, Outcome::Diverged { .. })
    }
}

/// Error and convergence bounds evaluated for a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: ProblemConstants,
    /// Certified δ of the compressor; `None` when no certificate applies.
    pub delta: Option<f64>,
    pub step_limit: f64,
    pub error_feedback_bound: Option<f64>,
    pub convergence_terms: Option<[f64; 5]>,
    pub convergence_bound: Option<f64>,
    /// `‖w₀ − w*‖²`, or the squared box diameter when no saddle is known.
    pub init_dist_sq: f64,
}

pub fn compute_bounds(config: &RunConfig, problem: &dyn SaddleProblem, w0: &ParamVector) -> Result<BoundReport> {
    let c = problem.constants();
    let (batch, workers, eta) = (config.run.batch, config.run.workers, config.optimizer.eta);
    let delta = delta_lower_bound(&config.compressor, problem.dim())?.value();
    let init_dist_sq = match problem.saddle() {
        Some(star) => w0.sub(&star)?.norm_sq(),
        None => 4.0 * c.domain_radius * c.domain_radius * problem.dim() as f64,
    };
    let (error_bound, terms) = match delta {
        Some(delta) => {
            let inputs = ConvergenceInputs {
                eta,
                batch,
                workers,
                lipschitz: c.lipschitz,
                grad_bound: c.grad_bound,
                sigma: c.noise,
                delta,
                init_dist_sq,
                rounds: config.run.rounds,
            };
            (
                Some(error_feedback_bound(eta, delta, c.grad_bound, c.noise, batch)?),
                Some(convergence_terms(&inputs)?),
            )
        }
        None => (None, None),
    };
    Ok(BoundReport {
        constants: c,
        delta,
        step_limit: step_limit(batch, workers, c.lipschitz),
        error_feedback_bound: error_bound,
        convergence_bound: terms.map(|t| t.iter().sum()),
        convergence_terms: terms,
        init_dist_sq,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub metrics_path: Option<PathBuf>,
    pub outcome: Outcome,
    pub summary: Summary,
    pub bounds: BoundReport,
    /// First round with `‖w‖∞` beyond the problem's domain radius.
    pub left_domain_at: Option<u64>,
    pub warnings: Vec<String>,
    pub wall_seconds: f64,
}

impl ExperimentReport {
    /// Recomputes the summary from the metrics file and compares it exactly.
    pub fn verify_metrics(&self) -> Result<bool> {
        let path = self
            .metrics_path
            .as_ref()
            .ok_or_else(|| Error::Config("report has no metrics file".into()))?;
        let records = read_metrics(File::open(path)?)?;
        Ok(Summary::from_records(&records) == self.summary)
    }
}

fn initial_point(config: &RunConfig, problem: &dyn SaddleProblem) -> Result<ParamVector> {
    match &config.run.init {
        Some(values) => {
            ensure_dim(problem.dim(), values.len())?;
            Ok(ParamVector::new(values.clone()))
        }
        None => Ok(problem.default_init()),
    }
}

fn guard_violation(w: &ParamVector, guard: f64) -> Option<String> {
    if !w.is_finite() {
        Some("non-finite iterate".into())
    } else if w.norm() > guard {
        Some(format!("‖w‖ = {:e} exceeds guard {guard:e}", w.norm()))
    } else {
        None
    }
}

/// One round of whichever algorithm the config selects.
enum Engine {
    Distributed(Cluster),
    Single { method: Method, state: OptimizerState },
}

impl Engine {
    fn new(config: &RunConfig, problem: &dyn SaddleProblem, w0: ParamVector) -> Result<Self> {
        let seed = config.run.seed;
        let method = match config.optimizer.method {
            Algorithm::Dqgan => return Ok(Engine::Distributed(Cluster::new(problem, w0, config.protocol())?)),
            Algorithm::Omd => Method::Omd,
            Algorithm::Extragradient => Method::Extragradient,
            Algorithm::Gd => Method::Gd,
        };
        let state = if method == Method::Omd {
            let mut rng = stream(seed, 1, 0, Purpose::Data);
            OptimizerState::warm_start(problem, w0, Sampling::Minibatch(config.run.batch), &mut rng)?
        } else {
            OptimizerState::new(w0)
        };
        Ok(Engine::Single { method, state })
    }

    fn w(&self) -> &ParamVector {
        match self {
            Engine::Distributed(cluster) => &cluster.server.w,
            Engine::Single { state, .. } => &state.w,
        }
    }

    fn round(&mut self, config: &RunConfig, problem: &dyn SaddleProblem) -> Result<MetricsRecord> {
        let (method, state) = match self {
            Engine::Distributed(cluster) => return cluster.run_round(problem),
            Engine::Single { method, state } => (*method, state),
        };
        let t = state.step + 1;
        let mut rng = stream(config.run.seed, 1, t, Purpose::Data);
        let w_prev = state.w.clone();
        state.advance(method, problem, &config.optimizer.eta, Sampling::Minibatch(config.run.batch), &mut rng)?;
        let g = match method {
            Method::Omd => state.g_prev.clone(),
            Method::Gd => operator_eval(problem, &w_prev)?,
            Method::Extragradient => operator_eval(problem, &state.w_half)?,
        };
        let dist_to_saddle = match problem.saddle() {
            Some(star) => Some(state.w.distance(&star)?),
            None => None,
        };
        Ok(MetricsRecord { t, grad_norm_sq: g.norm_sq(), err_norm_sq: 0.0, dist_to_saddle, bits_up: 0 })
    }
}

/// Runs `config` to completion or divergence, streaming every round to `sink`.
pub fn simulate(config: &RunConfig, sink: &mut dyn MetricsSink) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let problem = build_problem(&config.problem)?;
    let problem = problem.as_ref();
    let w0 = initial_point(config, problem)?;
    let bounds = compute_bounds(config, problem, &w0)?;

    let mut warnings = Vec::new();
    if config.optimizer.eta > bounds.step_limit {
        warnings.push(format!(
            "eta {} exceeds the step limit {:.6e}; convergence bound does not apply",
            config.optimizer.eta, bounds.step_limit
        ));
    }
    if bounds.delta.is_none() {
        warnings.push("compressor has no certified delta; bounds not reported".into());
    }

    let mut engine = Engine::new(config, problem, w0)?;
    let mut records = Vec::with_capacity(config.run.rounds as usize);
    let mut outcome = Outcome::Completed;
    let mut left_domain_at = None;
    let radius = bounds.constants.domain_radius;
    for t in 1..=config.run.rounds {
        let record = match engine.round(config, problem) {
            Ok(record) => record,
            Err(Error::NonFinite(what)) => {
                outcome = Outcome::Diverged { round: t, reason: format!("non-finite {what}") };
                break;
            }
            Err(e) => return Err(e),
        };
        sink.record(&record)?;
        records.push(record);
        let w = engine.w();
        if left_domain_at.is_none() && w.max_abs() > radius {
            left_domain_at = Some(t);
            warnings.push(format!("iterate left the domain box ‖w‖∞ ≤ {radius} at round {t}"));
        }
        if let Some(reason) = guard_violation(w, config.run.guard_norm) {
            outcome = Outcome::Diverged { round: t, reason };
            break;
        }
    }
    sink.flush()?;
    for w in &warnings {
        warn!("{w}");
    }
    if let Outcome::Diverged { round, reason } = &outcome {
        warn!("diverged at round {round}: {reason}");
    }

    Ok(ExperimentReport {
        config: config.clone(),
        metrics_path: None,
        outcome,
        summary: Summary::from_records(&records),
        bounds,
        left_domain_at,
        warnings,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_in_memory(config: &RunConfig) -> Result<(ExperimentReport, Vec<MetricsRecord>)> {
    let mut records = Vec::new();
    let report = simulate(config, &mut records)?;
    Ok((report, records))
}

/// Writes `metrics.csv` and `summary.json` under `out_dir`.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<ExperimentReport> {
    run_recorded(config, out_dir).map(|(report, _)| report)
}

/// `run_experiment` that also hands back the per-round records.
pub fn run_recorded(config: &RunConfig, out_dir: &Path) -> Result<(ExperimentReport, Vec<MetricsRecord>)> {
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut sink = CsvMetrics::new(BufWriter::new(File::create(&metrics_path)?))?;
    let mut report = simulate(config, &mut sink)?;
    report.metrics_path = Some(metrics_path);
    let summary = serde_json::to_string_pretty(&report)?;
    std::fs::write(out_dir.join(SUMMARY_FILE), summary + "\n")?;
    info!(
        "{} rounds, mean grad_norm_sq {:.6e}, {} bits up",
        report.summary.rounds_completed, report.summary.mean_grad_norm_sq, report.summary.total_bits_up
    );
    Ok((report, sink.into_records()))
}
