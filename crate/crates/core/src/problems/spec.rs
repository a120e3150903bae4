use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LinearGame, SaddleProblem, ToyWgan, ToyWganConfig, DEFAULT_DOMAIN_RADIUS};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixPreset {
    /// Rectangular identity.
    Identity,
    /// Entries `N(0, 1/max(rows, cols))`, seeded by the problem seed.
    Random,
}

/// Coupling matrix: a named preset or inline rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Preset(MatrixPreset),
    Inline(Vec<Vec<f64>>),
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec::Preset(MatrixPreset::Identity)
    }
}

fn one() -> usize {
    1
}

fn default_radius() -> f64 {
    DEFAULT_DOMAIN_RADIUS
}

fn default_mu() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Bilinear {
        #[serde(default = "one")]
        dim_theta: usize,
        #[serde(default = "one")]
        dim_phi: usize,
        #[serde(default)]
        matrix: MatrixSpec,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_radius")]
        domain_radius: f64,
    },
    Quadratic {
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default = "one")]
        dim_theta: usize,
        #[serde(default = "one")]
        dim_phi: usize,
        #[serde(default)]
        matrix: MatrixSpec,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_radius")]
        domain_radius: f64,
    },
    Dirac {
        #[serde(default)]
        sigma: f64,
        #[serde(default = "default_radius")]
        domain_radius: f64,
    },
    ToyWgan(ToyWganConfig),
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::Bilinear {
            dim_theta: 1,
            dim_phi: 1,
            matrix: MatrixSpec::default(),
            sigma: 0.0,
            seed: 0,
            domain_radius: DEFAULT_DOMAIN_RADIUS,
        }
    }
}

fn build_matrix(spec: &MatrixSpec, rows: usize, cols: usize, seed: u64) -> Result<DMatrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("matrix dimensions must be positive".into()));
    }
    match spec {
        MatrixSpec::Preset(MatrixPreset::Identity) => Ok(DMatrix::identity(rows, cols)),
        MatrixSpec::Preset(MatrixPreset::Random) => {
            let mut rng = stream(seed, 0, 0, Purpose::Problem);
            let scale = 1.0 / (rows.max(cols) as f64).sqrt();
            Ok(DMatrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            }))
        }
        MatrixSpec::Inline(data) => {
            if data.len() != rows || data.iter().any(|r| r.len() != cols) {
                return Err(Error::Config(format!(
                    "inline matrix must be {rows}x{cols}"
                )));
            }
            Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
        }
    }
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Box<dyn SaddleProblem>> {
    Ok(match spec {
        ProblemSpec::Bilinear { dim_theta, dim_phi, matrix, sigma, seed, domain_radius } => {
            let a = build_matrix(matrix, *dim_theta, *dim_phi, *seed)?;
            Box::new(LinearGame::bilinear(a, *sigma, *domain_radius)?)
        }
        ProblemSpec::Quadratic { mu, dim_theta, dim_phi, matrix, sigma, seed, domain_radius } => {
            let a = build_matrix(matrix, *dim_theta, *dim_phi, *seed)?;
            Box::new(LinearGame::quadratic(*mu, a, *sigma, *domain_radius)?)
        }
        ProblemSpec::Dirac { sigma, domain_radius } => Box::new(LinearGame::dirac(*sigma, *domain_radius)?),
        ProblemSpec::ToyWgan(config) => Box::new(ToyWgan::new(config)?),
    })
}
