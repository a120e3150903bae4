//! Operator oracles `F(w) = [∇_θ L_G; ∇_φ L_D]` for saddle-point problems.

mod linear;
mod spec;
mod toy_wgan;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::vector::ParamVector;

pub use linear::LinearGame;
pub use spec::{build_problem, MatrixPreset, MatrixSpec, ProblemSpec};
pub use toy_wgan::{ToyWgan, ToyWganConfig};

pub const DEFAULT_DOMAIN_RADIUS: f64 = 10.0;

/// Constants entering the error and convergence bounds.
///
/// `grad_bound` holds over the box `‖w‖∞ ≤ domain_radius`; `noise` is the
/// square root of the per-sample variance bound `E‖F(w; ξ) − F(w)‖² ≤ noise²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub lipschitz: f64,
    pub grad_bound: f64,
    pub noise: f64,
    pub domain_radius: f64,
}

pub trait SaddleProblem: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Number of generator (minimizing player) coordinates; `w = [θ; φ]`.
    fn theta_dim(&self) -> usize;

    /// Exact `F(w)`.
    fn operator(&self, w: &ParamVector) -> Result<ParamVector>;

    /// One-sample unbiased estimate `F(w; ξ)`.
    fn sample(&self, w: &ParamVector, rng: &mut StreamRng) -> Result<ParamVector>;

    /// Minibatch estimate: mean of `batch` per-sample estimates.
    fn stochastic(&self, w: &ParamVector, batch: usize, rng: &mut StreamRng) -> Result<ParamVector> {
        check_batch(batch)?;
        let samples = (0..batch)
            .map(|_| self.sample(w, rng))
            .collect::<Result<Vec<_>>>()?;
        ParamVector::mean(&samples, self.dim())
    }

    /// `(L_G, L_D)`; their partial gradients in θ and φ assemble `F`.
    fn player_losses(&self, w: &ParamVector) -> Result<(f64, f64)>;

    fn constants(&self) -> ProblemConstants;

    fn saddle(&self) -> Option<ParamVector>;

    fn default_init(&self) -> ParamVector;
}

pub(crate) fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::InvalidArgument("minibatch size must be at least 1".into()));
    }
    Ok(())
}

pub(crate) fn check_input(problem: &dyn SaddleProblem, w: &ParamVector) -> Result<()> {
    crate::error::ensure_dim(problem.dim(), w.dim())?;
    w.ensure_finite("operator input")
}

/// `operator_eval` with an output finiteness check.
pub fn operator_eval(problem: &dyn SaddleProblem, w: &ParamVector) -> Result<ParamVector> {
    let f = problem.operator(w)?;
    f.ensure_finite("operator output")?;
    Ok(f)
}

pub fn stochastic_eval(
    problem: &dyn SaddleProblem,
    w: &ParamVector,
    batch: usize,
    rng: &mut StreamRng,
) -> Result<ParamVector> {
    let f = problem.stochastic(w, batch, rng)?;
    f.ensure_finite("stochastic operator output")?;
    Ok(f)
}

/// Max over coordinates of `|analytic − central difference| / (|analytic| + 1e-12)`.
/// θ coordinates differentiate `L_G`, φ coordinates differentiate `L_D`.
pub fn grad_check(problem: &dyn SaddleProblem, w: &ParamVector, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let analytic = problem.operator(w)?;
    let split = problem.theta_dim();
    let mut probe = w.clone();
    let mut worst = 0.0_f64;
    for i in 0..w.dim() {
        let pick = |l: (f64, f64)| if i < split { l.0 } else { l.1 };
        probe[i] = w[i] + h;
        let up = pick(problem.player_losses(&probe)?);
        probe[i] = w[i] - h;
        let down = pick(problem.player_losses(&probe)?);
        probe[i] = w[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-12));
    }
    Ok(worst)
}
