//! Single-machine saddle-point methods (unconstrained).
//!
//! - simultaneous gradient descent: `w ← w − ηF(w)`
//! - extragradient: `w½ = w − ηF(w)`, `w ← w − ηF(w½)`
//! - optimistic mirror descent (past extragradient):
//!   `w½ = w − η·g_prev`, `g_prev ← F(w½)`, `w ← w − η·g_prev`
//!
//! OMD needs `F(w_{−½})` before its first step; [`OptimizerState::warm_start`]
//! takes `w_{−½} = w₀`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::problems::{operator_eval, stochastic_eval, SaddleProblem};
use crate::rng::StreamRng;
use crate::vector::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    Extragradient,
    Omd,
}

/// Exact operator or a minibatch estimate of the given size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Exact,
    Minibatch(usize),
}

/// Step size as a function of the step counter. Plain `f64` is constant.
pub trait StepSchedule {
    fn step_size(&self, step: u64) -> f64;
}

impl StepSchedule for f64 {
    fn step_size(&self, _step: u64) -> f64 {
        *self
    }
}

pub struct Schedule<F>(pub F);

impl<F: Fn(u64) -> f64> StepSchedule for Schedule<F> {
    fn step_size(&self, step: u64) -> f64 {
        (self.0)(step)
    }
}

pub(crate) fn check_step(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive and finite, got {eta}")))
    }
}

fn evaluate(
    problem: &dyn SaddleProblem,
    w: &ParamVector,
    sampling: Sampling,
    rng: &mut StreamRng,
) -> Result<ParamVector> {
    match sampling {
        Sampling::Exact => operator_eval(problem, w),
        Sampling::Minibatch(b) => stochastic_eval(problem, w, b, rng),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Current iterate `w_t`.
    pub w: ParamVector,
    /// Operator value at the latest half iterate.
    pub g_prev: ParamVector,
    /// Latest half iterate `w_{t+½}`.
    pub w_half: ParamVector,
    pub step: u64,
}

impl OptimizerState {
    /// State for methods without memory; `g_prev` starts at zero.
    pub fn new(w0: ParamVector) -> Self {
        Self {
            g_prev: ParamVector::zeros(w0.dim()),
            w_half: w0.clone(),
            w: w0,
            step: 0,
        }
    }

    /// Sets `w_{−½} = w₀` and caches `F(w₀)` (or a minibatch estimate of it).
    pub fn warm_start(
        problem: &dyn SaddleProblem,
        w0: ParamVector,
        sampling: Sampling,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        ensure_dim(problem.dim(), w0.dim())?;
        let g_prev = evaluate(problem, &w0, sampling, rng)?;
        Ok(Self { g_prev, w_half: w0.clone(), w: w0, step: 0 })
    }

    fn commit(&mut self, w: ParamVector) -> Result<()> {
        w.ensure_finite("iterate")?;
        self.w = w;
        self.step += 1;
        Ok(())
    }

    pub fn gd_step(&mut self, problem: &dyn SaddleProblem, eta: f64) -> Result<()> {
        check_step(eta)?;
        let f = operator_eval(problem, &self.w)?;
        let next = self.w.sub_scaled(eta, &f)?;
        self.commit(next)
    }

    pub fn extragradient_step(&mut self, problem: &dyn SaddleProblem, eta: f64) -> Result<()> {
        check_step(eta)?;
        let f = operator_eval(problem, &self.w)?;
        let half = self.w.sub_scaled(eta, &f)?;
        let f_half = operator_eval(problem, &half)?;
        let next = self.w.sub_scaled(eta, &f_half)?;
        self.w_half = half;
        self.commit(next)
    }

    pub fn omd_step(
        &mut self,
        problem: &dyn SaddleProblem,
        eta: f64,
        sampling: Sampling,
        rng: &mut StreamRng,
    ) -> Result<()> {
        check_step(eta)?;
        ensure_dim(self.w.dim(), self.g_prev.dim())?;
        let half = self.w.sub_scaled(eta, &self.g_prev)?;
        let g_new = evaluate(problem, &half, sampling, rng)?;
        let next = self.w.sub_scaled(eta, &g_new)?;
        self.w_half = half;
        self.g_prev = g_new;
        self.commit(next)
    }

    pub fn advance(
        &mut self,
        method: Method,
        problem: &dyn SaddleProblem,
        schedule: &dyn StepSchedule,
        sampling: Sampling,
        rng: &mut StreamRng,
    ) -> Result<()> {
        let eta = schedule.step_size(self.step);
        match method {
            Method::Gd => self.gd_step(problem, eta),
            Method::Extragradient => self.extragradient_step(problem, eta),
            Method::Omd => self.omd_step(problem, eta, sampling, rng),
        }
    }
}

/// `w_{t+½} = w_{t−½} − 2η·F(w_{t−½}) + η·F(w_{t−3/2})`.
pub fn one_line_omd_step(
    w_half_prev: &ParamVector,
    g_prev: &ParamVector,
    g_prev2: &ParamVector,
    eta: f64,
) -> Result<ParamVector> {
    ensure_dim(w_half_prev.dim(), g_prev.dim())?;
    ensure_dim(w_half_prev.dim(), g_prev2.dim())?;
    Ok(ParamVector::new(
        w_half_prev
            .iter()
            .zip(g_prev.iter())
            .zip(g_prev2.iter())
            .map(|((w, g1), g2)| w - 2.0 * eta * g1 + eta * g2)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::LinearGame;
    use crate::rng::{stream, Purpose};
    use nalgebra::DMatrix;

    fn eye() -> LinearGame {
        LinearGame::bilinear(DMatrix::identity(1, 1), 0.0, 10.0).unwrap()
    }

    fn quad_identity() -> LinearGame {
        LinearGame::quadratic(1.0, DMatrix::zeros(1, 1), 0.0, 10.0).unwrap()
    }

    fn zero_field() -> LinearGame {
        LinearGame::bilinear(DMatrix::zeros(1, 1), 0.0, 10.0).unwrap()
    }

    fn rng() -> StreamRng {
        stream(0, 0, 0, Purpose::Data)
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v)
    }

    fn close(a: &ParamVector, b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn gd_examples() {
        let mut s = OptimizerState::new(pv(&[1.0, 0.0]));
        s.gd_step(&eye(), 0.1).unwrap();
        assert!(close(&s.w, &[1.0, 0.1]));
        assert!((s.w.norm_sq() - 1.01).abs() < 1e-15);
        assert_eq!(s.step, 1);

        let mut s = OptimizerState::new(pv(&[2.0, 2.0]));
        s.gd_step(&quad_identity(), 0.5).unwrap();
        assert_eq!(s.w.as_slice(), &[1.0, 1.0]);

        let mut s = OptimizerState::new(pv(&[0.3, -4.0]));
        s.gd_step(&zero_field(), 0.7).unwrap();
        assert_eq!(s.w.as_slice(), &[0.3, -4.0]);
    }

    #[test]
    fn extragradient_examples() {
        let mut s = OptimizerState::new(pv(&[1.0, 0.0]));
        s.extragradient_step(&eye(), 0.1).unwrap();
        assert!(close(&s.w_half, &[1.0, 0.1]));
        assert!(close(&s.w, &[0.99, 0.1]));

        let mut s = OptimizerState::new(pv(&[1.0, 0.0]));
        s.extragradient_step(&quad_identity(), 0.5).unwrap();
        assert_eq!(s.w_half.as_slice(), &[0.5, 0.0]);
        assert_eq!(s.w.as_slice(), &[0.75, 0.0]);

        let mut s = OptimizerState::new(pv(&[5.0, 6.0]));
        s.extragradient_step(&zero_field(), 0.5).unwrap();
        assert_eq!(s.w.as_slice(), &[5.0, 6.0]);
    }

    #[test]
    fn omd_examples() {
        let mut r = rng();
        let mut s = OptimizerState::warm_start(&eye(), pv(&[1.0, 0.0]), Sampling::Exact, &mut r).unwrap();
        assert_eq!(s.g_prev.as_slice(), &[0.0, -1.0]);
        s.omd_step(&eye(), 0.1, Sampling::Exact, &mut r).unwrap();
        assert!(close(&s.w_half, &[1.0, 0.1]));
        assert!(close(&s.g_prev, &[0.1, -1.0]));
        assert!(close(&s.w, &[0.99, 0.1]));

        let mut s = OptimizerState::warm_start(&zero_field(), pv(&[2.0, 1.0]), Sampling::Exact, &mut r).unwrap();
        for _ in 0..5 {
            s.omd_step(&zero_field(), 0.3, Sampling::Exact, &mut r).unwrap();
        }
        assert_eq!(s.w.as_slice(), &[2.0, 1.0]);
        assert_eq!(s.g_prev.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn one_line_examples() {
        let w = pv(&[1.0, -2.0]);
        let g = pv(&[0.5, 0.25]);
        let out = one_line_omd_step(&w, &g, &g, 0.2).unwrap();
        let plain = w.sub_scaled(0.2, &g).unwrap();
        assert!(close(&out, plain.as_slice()));
        let zero = ParamVector::zeros(2);
        assert_eq!(one_line_omd_step(&w, &zero, &zero, 0.2).unwrap(), w);
        assert!(one_line_omd_step(&w, &g, &ParamVector::zeros(3), 0.2).is_err());
    }

    #[test]
    fn rejects_bad_step_and_blowup() {
        let mut s = OptimizerState::new(pv(&[1.0, 0.0]));
        assert!(s.gd_step(&eye(), 0.0).is_err());
        assert!(s.gd_step(&eye(), f64::NAN).is_err());
        let mut s = OptimizerState::new(pv(&[1e300, 1e300]));
        assert!(matches!(s.gd_step(&eye(), 1e10), Err(Error::NonFinite(_))));
    }

    #[test]
    fn schedule_hook() {
        let mut r = rng();
        let sched = Schedule(|t: u64| 0.1 / (1.0 + t as f64));
        let mut s = OptimizerState::new(pv(&[1.0, 0.0]));
        s.advance(Method::Gd, &eye(), &sched, Sampling::Exact, &mut r).unwrap();
        s.advance(Method::Gd, &eye(), &sched, Sampling::Exact, &mut r).unwrap();
        let mut manual = OptimizerState::new(pv(&[1.0, 0.0]));
        manual.gd_step(&eye(), 0.1).unwrap();
        manual.gd_step(&eye(), 0.05).unwrap();
        assert_eq!(s.w, manual.w);
    }

    #[test]
    fn omd_spirals_in_on_bilinear() {
        // Reference run: ‖w_t‖ first drops below 1e-3 at t = 1429 (‖w_500‖ ≈ 0.1117).
        let mut r = rng();
        let mut s = OptimizerState::warm_start(&eye(), pv(&[1.0, 1.0]), Sampling::Exact, &mut r).unwrap();
        let mut first_below = None;
        for t in 1..=2000u64 {
            s.omd_step(&eye(), 0.1, Sampling::Exact, &mut r).unwrap();
            if t == 500 {
                assert!((s.w.norm() - 0.1117).abs() < 1e-4, "{}", s.w.norm());
            }
            if first_below.is_none() && s.w.norm() < 1e-3 {
                first_below = Some(t);
            }
        }
        assert_eq!(first_below, Some(1429));
    }
}
