//! Deterministic parameter-server simulation of quantized, error-compensated
//! optimistic mirror descent for saddle-point problems.
//!
//! - [`quantize`]: δ-approximate compressors and their wire format
//! - [`optim`]: single-machine gradient, extragradient and OMD steps
//! - [`problems`]: operator oracles for test games and a toy WGAN
//! - [`dist`]: the worker/server round protocol and its error bounds
//! - [`harness`]: configs, experiment runner, metrics and sweeps

pub mod dist;
pub mod error;
pub mod harness;
pub mod optim;
pub mod problems;
pub mod quantize;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ParamVector;
