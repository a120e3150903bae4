//! Experiment orchestration: configs, runs, metrics files and sweeps.

mod config;
mod metrics;
mod runner;
mod sweep;

pub use config::{apply_override, Algorithm, OptimizerSection, RunConfig, RunSection, DEFAULT_GUARD_NORM};
pub use metrics::{format_float, read_metrics, CsvMetrics, MetricsSink, Summary, METRICS_HEADER};
pub use runner::{
    compute_bounds, run_experiment, run_in_memory, run_recorded, simulate, BoundReport, ExperimentReport, Outcome,
    METRICS_FILE, SUMMARY_FILE,
};
pub use sweep::{loglog_slope, speedup_sweep, SweepRow, SweepTable};
