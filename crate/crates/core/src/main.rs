use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde_json::json;

use qsaddle::harness::{compute_bounds, run_experiment, speedup_sweep, RunConfig};
use qsaddle::problems::build_problem;
use qsaddle::quantize::{certify_delta, delta_lower_bound};
use qsaddle::rng::{stream, Purpose};
use qsaddle::Result;

/// Used when `--config` is omitted.
const DEFAULT_CONFIG: &str = r#"
[run]
rounds = 500

[optimizer]
method = "dqgan"
eta = 0.1
"#;

#[derive(Parser)]
#[command(name = "qsaddle", version, about = "Quantized distributed saddle-point solver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `section.key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        match &self.config {
            Some(path) => RunConfig::load(path, &overrides),
            None => RunConfig::parse_with_overrides(DEFAULT_CONFIG, &overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes metrics.csv and summary.json.
    Run(Common),
    /// Sweep the worker count for the linear-speedup check.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
    },
    /// Certify the configured compressor's δ at the problem dimension.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Print the error and convergence bounds for a config.
    Bounds(Common),
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(dir.join(name), text.clone() + "\n")?;
    println!("{text}");
    Ok(())
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(common) => {
            let config = common.load()?;
            let report = run_experiment(&config, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            if report.outcome.diverged() {
                error!("run diverged: {:?}", report.outcome);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep { common, workers, replicates } => {
            let config = common.load()?;
            let table = speedup_sweep(&config, &workers, replicates, Some(&common.out))?;
            let mut csv = csv::Writer::from_path({
                std::fs::create_dir_all(&common.out)?;
                common.out.join("sweep.csv")
            })?;
            for row in &table.rows {
                csv.serialize(row)?;
            }
            csv.flush()?;
            write_json(&common.out, "sweep.json", &serde_json::to_value(&table)?)?;
        }
        Command::Certify { common, samples } => {
            let config = common.load()?;
            let dim = build_problem(&config.problem)?.dim();
            let bound = delta_lower_bound(&config.compressor, dim)?;
            let mut rng = stream(config.run.seed, 0, 0, Purpose::Certify);
            let empirical = certify_delta(&config.compressor, dim, samples, &mut rng)?;
            let value = json!({
                "compressor": config.compressor,
                "dim": dim,
                "delta_lower_bound": bound.value(),
                "empirical_delta": empirical,
                "samples": samples,
            });
            write_json(&common.out, "certify.json", &value)?;
        }
        Command::Bounds(common) => {
            let config = common.load()?;
            let problem = build_problem(&config.problem)?;
            let w0 = match &config.run.init {
                Some(v) => qsaddle::ParamVector::new(v.clone()),
                None => problem.default_init(),
            };
            let bounds = compute_bounds(&config, problem.as_ref(), &w0)?;
            write_json(&common.out, "bounds.json", &serde_json::to_value(&bounds)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
