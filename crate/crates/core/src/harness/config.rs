//! Run configuration.
//!
//! Configs are TOML documents with four tables, `run`, `optimizer`,
//! `compressor` and `problem`. Any key may be overridden from the command
//! line as `section.key=value`; the value is parsed as a TOML literal and
//! falls back to a bare string.
//!
//! ```toml
//! [run]
//! rounds = 500
//! batch = 1
//! workers = 1
//! seed = 0
//! shared_batches = false
//! guard_norm = 1e6
//! # init = [1.0, 1.0]        # defaults to the problem's initial point
//!
//! [optimizer]
//! method = "dqgan"           # dqgan | omd | extragradient | gd
//! eta = 0.1
//!
//! [compressor]
//! kind = "stochastic_bits"   # identity | top_k (k = ..) | stochastic_bits
//! bits = 8
//! norm = "max"               # max | euclidean
//!
//! [problem]
//! kind = "bilinear"          # bilinear | quadratic | dirac | toy_wgan
//! dim_theta = 1
//! dim_phi = 1
//! matrix = "identity"        # identity | random | [[row], ...]
//! sigma = 0.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dist::ProtocolConfig;
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::quantize::CompressorSpec;

pub const DEFAULT_GUARD_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Distributed quantized OMD with error feedback.
    Dqgan,
    Omd,
    Extragradient,
    Gd,
}

fn default_guard() -> f64 {
    DEFAULT_GUARD_NORM
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub rounds: u64,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shared_batches: bool,
    /// Abort once `‖w‖` exceeds this.
    #[serde(default = "default_guard")]
    pub guard_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSection {
    pub method: Algorithm,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub optimizer: OptimizerSection,
    #[serde(default = "identity")]
    pub compressor: CompressorSpec,
    #[serde(default)]
    pub problem: ProblemSpec,
}

fn identity() -> CompressorSpec {
    CompressorSpec::Identity
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        Self::from_table(table)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.rounds == 0 {
            return Err(Error::Config("run.rounds must be at least 1".into()));
        }
        if self.run.batch == 0 || self.run.workers == 0 {
            return Err(Error::Config("run.batch and run.workers must be at least 1".into()));
        }
        if !(self.optimizer.eta > 0.0 && self.optimizer.eta.is_finite()) {
            return Err(Error::Config(format!("optimizer.eta must be positive, got {}", self.optimizer.eta)));
        }
        if !(self.run.guard_norm > 0.0) {
            return Err(Error::Config("run.guard_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            eta: self.optimizer.eta,
            batch: self.run.batch,
            workers: self.run.workers,
            compressor: self.compressor,
            seed: self.run.seed,
            shared_batches: self.run.shared_batches,
        }
    }
}

fn parse_literal(raw: &str) -> Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets a dotted `key=value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut node = table;
    for part in parents {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), parse_literal(raw));
    Ok(())
}
