//! Synchronous parameter-server protocol with quantized, error-compensated uploads.
//!
//! Each round `t`, every worker `m`:
//! 1. half step `w½ = w_{t−1} − (η·g_prev + e)`,
//! 2. minibatch gradient `g = F(w½; ξ_t)`, `p = η·g + e`,
//! 3. pushes `Q(p)` and keeps `e ← p − Q(p)`.
//!
//! The server averages the dequantized uploads in ascending worker order and
//! broadcasts `q̂`; every worker applies `w_t = w_{t−1} − q̂`.
//!
//! The error `e_{t−1}` enters both the half step and `p`. Workers run
//! serially in id order, which is the reference order for bit-exact replay.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::optim::check_step;
use crate::problems::{stochastic_eval, SaddleProblem};
use crate::quantize::{compress, decompress, CompressorSpec, QuantizedMessage};
use crate::rng::{stream, Purpose, StreamRng};
use crate::vector::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub eta: f64,
    pub batch: usize,
    pub workers: usize,
    pub compressor: CompressorSpec,
    pub seed: u64,
    /// All workers draw the same minibatches (worker 1's data stream).
    pub shared_batches: bool,
}

impl ProtocolConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        check_step(self.eta)?;
        if self.batch == 0 || self.workers == 0 {
            return Err(Error::InvalidArgument("batch and worker count must be at least 1".into()));
        }
        self.compressor.validate(dim)
    }

    fn data_stream(&self, worker: usize, round: u64) -> StreamRng {
        let source = if self.shared_batches { 1 } else { worker };
        stream(self.seed, source as u64, round, Purpose::Data)
    }

    fn compressor_stream(&self, worker: usize, round: u64) -> StreamRng {
        stream(self.seed, worker as u64, round, Purpose::Compressor)
    }
}

/// The step-size ceiling `min{1/√(BM), 1/(6√2·L)}` under which the
/// convergence bound holds.
pub fn step_limit(batch: usize, workers: usize, lipschitz: f64) -> f64 {
    let by_noise = 1.0 / ((batch * workers) as f64).sqrt();
    let by_smoothness = if lipschitz > 0.0 {
        1.0 / (6.0 * std::f64::consts::SQRT_2 * lipschitz)
    } else {
        f64::INFINITY
    };
    by_noise.min(by_smoothness)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    /// 1-based worker id.
    pub id: usize,
    /// Error accumulator `e_t`.
    pub e: ParamVector,
    /// Last minibatch gradient, without the η factor.
    pub g_prev: ParamVector,
    pub w_half: ParamVector,
}

impl WorkerState {
    /// `e₀ = 0`, `w_{−½} = w₀` and `g_prev` from an extra warm-up minibatch ξ₀.
    pub fn warm_start(
        id: usize,
        problem: &dyn SaddleProblem,
        w0: &ParamVector,
        batch: usize,
        data_rng: &mut StreamRng,
    ) -> Result<Self> {
        ensure_dim(problem.dim(), w0.dim())?;
        Ok(Self {
            id,
            e: ParamVector::zeros(w0.dim()),
            g_prev: stochastic_eval(problem, w0, batch, data_rng)?,
            w_half: w0.clone(),
        })
    }

    /// `w½ ← w_prev − (η·g_prev + e)`.
    pub fn half_step(&mut self, w_prev: &ParamVector, eta: f64) -> Result<()> {
        ensure_dim(self.e.dim(), w_prev.dim())?;
        let correction = self.e.add_scaled(eta, &self.g_prev)?;
        let half = w_prev.sub(&correction)?;
        half.ensure_finite("worker half iterate")?;
        self.w_half = half;
        Ok(())
    }

    /// Gradient at `w½`, error-compensated compression, error update.
    pub fn upload(
        &mut self,
        problem: &dyn SaddleProblem,
        eta: f64,
        batch: usize,
        compressor: &CompressorSpec,
        data_rng: &mut StreamRng,
        compressor_rng: &mut StreamRng,
    ) -> Result<QuantizedMessage> {
        let g = stochastic_eval(problem, &self.w_half, batch, data_rng)?;
        let p = self.e.add_scaled(eta, &g)?;
        let message = compress(&p, compressor, compressor_rng)?;
        self.e = p.sub(&decompress(&message))?;
        self.g_prev = g;
        Ok(message)
    }
}

/// `w_prev − q̂`.
pub fn worker_apply(w_prev: &ParamVector, q_hat: &ParamVector) -> Result<ParamVector> {
    w_prev.sub(q_hat)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub w: ParamVector,
    pub round: u64,
}

impl ServerState {
    pub fn new(w0: ParamVector) -> Self {
        Self { w: w0, round: 0 }
    }

    /// Mean of the dequantized uploads, summed in the given (worker id) order.
    pub fn aggregate(&self, uploads: &[Vec<u8>], workers: usize) -> Result<ParamVector> {
        if uploads.len() != workers {
            return Err(Error::MissingMessages { expected: workers, got: uploads.len() });
        }
        let decoded = uploads
            .iter()
            .map(|bytes| {
                let v = decompress(&QuantizedMessage::decode(bytes)?);
                ensure_dim(self.w.dim(), v.dim())?;
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        ParamVector::mean(&decoded, self.w.dim())
    }

    pub fn commit(&mut self, w: ParamVector) -> Result<()> {
        w.ensure_finite("global iterate")?;
        self.w = w;
        self.round += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    /// `‖(1/M) Σ_m F(w½^(m); ξ_t^(m))‖²`.
    pub grad_norm_sq: f64,
    /// `‖(1/M) Σ_m e_t^(m)‖²`.
    pub err_norm_sq: f64,
    pub dist_to_saddle: Option<f64>,
    pub bits_up: u64,
}

/// Workers plus server for one run.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub config: ProtocolConfig,
    pub workers: Vec<WorkerState>,
    pub server: ServerState,
}

impl Cluster {
    pub fn new(problem: &dyn SaddleProblem, w0: ParamVector, config: ProtocolConfig) -> Result<Self> {
        config.validate(problem.dim())?;
        ensure_dim(problem.dim(), w0.dim())?;
        w0.ensure_finite("initial iterate")?;
        let workers = (1..=config.workers)
            .map(|id| {
                let mut rng = config.data_stream(id, 0);
                WorkerState::warm_start(id, problem, &w0, config.batch, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, workers, server: ServerState::new(w0) })
    }

    /// `w̃_t = w_t − (1/M) Σ_m e_t^(m)`.
    pub fn error_corrected(&self) -> Result<ParamVector> {
        let mean_e = ParamVector::mean(self.workers.iter().map(|w| &w.e), self.server.w.dim())?;
        self.server.w.sub(&mean_e)
    }

    pub fn run_round(&mut self, problem: &dyn SaddleProblem) -> Result<MetricsRecord> {
        let t = self.server.round + 1;
        let cfg = &self.config;
        let w_prev = self.server.w.clone();
        let mut uploads = Vec::with_capacity(self.workers.len());
        let mut bits_up = 0;
        for worker in &mut self.workers {
            worker.half_step(&w_prev, cfg.eta)?;
            let mut data_rng = cfg.data_stream(worker.id, t);
            let mut comp_rng = cfg.compressor_stream(worker.id, t);
            let msg = worker.upload(problem, cfg.eta, cfg.batch, &cfg.compressor, &mut data_rng, &mut comp_rng)?;
            bits_up += msg.payload_bits();
            uploads.push(msg.encode());
        }
        let q_hat = self.server.aggregate(&uploads, cfg.workers)?;
        let w_next = worker_apply(&w_prev, &q_hat)?;
        self.server.commit(w_next)?;

        let dim = w_prev.dim();
        let mean_g = ParamVector::mean(self.workers.iter().map(|w| &w.g_prev), dim)?;
        let mean_e = ParamVector::mean(self.workers.iter().map(|w| &w.e), dim)?;
        let dist_to_saddle = match problem.saddle() {
            Some(star) => Some(self.server.w.distance(&star)?),
            None => None,
        };
        Ok(MetricsRecord {
            t,
            grad_norm_sq: mean_g.norm_sq(),
            err_norm_sq: mean_e.norm_sq(),
            dist_to_saddle,
            bits_up,
        })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")))
    }
}

/// Bound on the averaged error accumulator: `8η²(1−δ)(G² + σ²/B)/δ²`.
pub fn error_feedback_bound(eta: f64, delta: f64, grad_bound: f64, sigma: f64, batch: usize) -> Result<f64> {
    check_delta(delta)?;
    check_step(eta)?;
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let noise = grad_bound * grad_bound + sigma * sigma / batch as f64;
    Ok(8.0 * eta * eta * (1.0 - delta) * noise / (delta * delta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInputs {
    pub eta: f64,
    pub batch: usize,
    pub workers: usize,
    pub lipschitz: f64,
    pub grad_bound: f64,
    pub sigma: f64,
    pub delta: f64,
    /// `‖w̃₀ − w*‖²`; `w̃₀ = w₀` since `e₀ = 0`.
    pub init_dist_sq: f64,
    pub rounds: u64,
}

/// The five terms of the averaged-gradient bound, in order:
/// `4‖w̃₀−w*‖²/(η²T)`, `1728L²σ²/(B²M²)`, `3456L²G²(M−1)/(BM²)`,
/// `9216L²(1−δ)(G²+σ²/B)(M−1)/(δ²BM²)`, `48σ²/(BM)`.
pub fn convergence_terms(x: &ConvergenceInputs) -> Result<[f64; 5]> {
    check_delta(x.delta)?;
    check_step(x.eta)?;
    if x.rounds == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if x.batch == 0 || x.workers == 0 {
        return Err(Error::InvalidArgument("batch and worker count must be at least 1".into()));
    }
    let b = x.batch as f64;
    let m = x.workers as f64;
    let l2 = x.lipschitz * x.lipschitz;
    let g2 = x.grad_bound * x.grad_bound;
    let s2 = x.sigma * x.sigma;
    Ok([
        4.0 * x.init_dist_sq / (x.eta * x.eta * x.rounds as f64),
        1728.0 * l2 * s2 / (b * b * m * m),
        3456.0 * l2 * g2 * (m - 1.0) / (b * m * m),
        9216.0 * l2 * (1.0 - x.delta) * (g2 + s2 / b) * (m - 1.0) / (x.delta * x.delta * b * m * m),
        48.0 * s2 / (b * m),
    ])
}

pub fn convergence_bound(x: &ConvergenceInputs) -> Result<f64> {
    Ok(convergence_terms(x)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{OptimizerState, Sampling};
    use crate::problems::LinearGame;
    use crate::quantize::ScaleNorm;
    use nalgebra::DMatrix;

    fn eye() -> LinearGame {
        LinearGame::bilinear(DMatrix::identity(1, 1), 0.0, 10.0).unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v)
    }

    fn config(workers: usize, compressor: CompressorSpec) -> ProtocolConfig {
        ProtocolConfig { eta: 0.1, batch: 1, workers, compressor, seed: 3, shared_batches: false }
    }

    fn rng() -> StreamRng {
        stream(0, 0, 0, Purpose::Data)
    }

    fn worker(e: &[f64], g: &[f64]) -> WorkerState {
        WorkerState { id: 1, e: pv(e), g_prev: pv(g), w_half: ParamVector::zeros(e.len()) }
    }

    #[test]
    fn half_step_examples() {
        let mut w = worker(&[0.1, 0.0], &[0.0, 0.0]);
        w.half_step(&pv(&[1.0, 1.0]), 123.0).unwrap();
        assert_eq!(w.w_half.as_slice(), &[0.9, 1.0]);

        let mut w = worker(&[0.0, 0.0], &[0.0, -1.0]);
        w.half_step(&pv(&[1.0, 0.0]), 0.1).unwrap();
        assert_eq!(w.w_half.as_slice(), &[1.0, 0.1]);

        // e = 0 and g_prev = F(w₀) reproduce the OMD half step.
        let mut r = rng();
        let mut w = WorkerState::warm_start(1, &eye(), &pv(&[0.3, 0.7]), 1, &mut r).unwrap();
        w.half_step(&pv(&[0.3, 0.7]), 0.1).unwrap();
        let mut s = OptimizerState::warm_start(&eye(), pv(&[0.3, 0.7]), Sampling::Exact, &mut r).unwrap();
        s.omd_step(&eye(), 0.1, Sampling::Exact, &mut r).unwrap();
        assert_eq!(w.w_half, s.w_half);

        assert!(w.half_step(&pv(&[1.0]), 0.1).is_err());
    }

    #[test]
    fn upload_examples() {
        let mut r = rng();
        let mut c = rng();
        let mut w = worker(&[0.0, 0.0], &[0.0, 0.0]);
        w.w_half = pv(&[0.4, -0.3]);
        let msg = w.upload(&eye(), 0.1, 1, &CompressorSpec::Identity, &mut r, &mut c).unwrap();
        let p = decompress(&msg);
        assert_eq!(p.as_slice(), &[0.1 * -0.3, 0.1 * -0.4]);
        assert_eq!(w.e.as_slice(), &[0.0, 0.0]);
        assert_eq!(w.g_prev.as_slice(), &[-0.3, -0.4]);

        // Top-1 on p = (0.3, −0.1): with F(θ, φ) = (φ, −θ), η = 1 and e = 0,
        // w½ = (0.1, 0.3) gives p = (0.3, −0.1).
        let mut w = worker(&[0.0, 0.0], &[0.0, 0.0]);
        w.w_half = pv(&[0.1, 0.3]);
        let msg = w.upload(&eye(), 1.0, 1, &CompressorSpec::TopK { k: 1 }, &mut r, &mut c).unwrap();
        assert_eq!(decompress(&msg).as_slice(), &[0.3, 0.0]);
        assert_eq!(w.e.as_slice(), &[0.0, -0.1]);
    }

    #[test]
    fn aggregate_examples() {
        let server = ServerState::new(ParamVector::zeros(2));
        let enc = |v: &[f64]| {
            compress(&pv(v), &CompressorSpec::Identity, &mut rng()).unwrap().encode()
        };
        let one = server.aggregate(&[enc(&[0.25, -3.0])], 1).unwrap();
        assert_eq!(one.as_slice(), &[0.25, -3.0]);
        let two = server.aggregate(&[enc(&[1.0, 0.0]), enc(&[0.0, 1.0])], 2).unwrap();
        assert_eq!(two.as_slice(), &[0.5, 0.5]);
        let same = vec![enc(&[0.1, 0.7]); 4];
        assert_eq!(server.aggregate(&same, 4).unwrap().as_slice(), &[0.1, 0.7]);
        let three = server.aggregate(&same[..3], 3).unwrap();
        assert!((three[0] - 0.1).abs() < 1e-16 && (three[1] - 0.7).abs() < 1e-15);
        assert!(matches!(server.aggregate(&same[..3], 4), Err(Error::MissingMessages { .. })));
        assert!(server.aggregate(&[vec![1, 2, 3]], 1).is_err());
        assert!(server.aggregate(&[enc(&[1.0, 2.0, 3.0])], 1).is_err());
    }

    #[test]
    fn apply_examples() {
        assert_eq!(worker_apply(&pv(&[1.0, 1.0]), &pv(&[0.0, 0.0])).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(worker_apply(&pv(&[1.0, 1.0]), &pv(&[0.5, 0.5])).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(worker_apply(&pv(&[1.0]), &pv(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn identity_round_is_one_omd_step() {
        let game = eye();
        let mut cluster = Cluster::new(&game, pv(&[1.0, 1.0]), config(1, CompressorSpec::Identity)).unwrap();
        let mut r = rng();
        let mut s = OptimizerState::warm_start(&game, pv(&[1.0, 1.0]), Sampling::Exact, &mut r).unwrap();
        for _ in 0..50 {
            cluster.run_round(&game).unwrap();
            s.omd_step(&game, 0.1, Sampling::Exact, &mut r).unwrap();
            assert_eq!(cluster.server.w, s.w);
            assert_eq!(cluster.workers[0].w_half, s.w_half);
            assert!(cluster.workers[0].e.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_field_is_stationary() {
        let game = LinearGame::bilinear(DMatrix::zeros(2, 1), 0.0, 10.0).unwrap();
        let spec = CompressorSpec::StochasticBits { bits: 4, norm: ScaleNorm::Max };
        let mut cluster = Cluster::new(&game, pv(&[1.0, -2.0, 0.5]), config(3, spec)).unwrap();
        for _ in 0..10 {
            let m = cluster.run_round(&game).unwrap();
            assert_eq!(m.grad_norm_sq, 0.0);
            assert_eq!(m.err_norm_sq, 0.0);
            assert_eq!(m.bits_up, 3 * 4 * 3);
        }
        assert_eq!(cluster.server.w.as_slice(), &[1.0, -2.0, 0.5]);
        assert_eq!(cluster.server.round, 10);
    }

    #[test]
    fn identical_workers_match_single_worker() {
        let game = LinearGame::quadratic(0.5, DMatrix::identity(2, 2), 0.0, 10.0).unwrap();
        let spec = CompressorSpec::TopK { k: 2 };
        let w0 = pv(&[1.0, -1.0, 0.5, 2.0]);
        let mut one = Cluster::new(&game, w0.clone(), config(1, spec)).unwrap();
        let mut two = Cluster::new(&game, w0, config(2, spec)).unwrap();
        for _ in 0..100 {
            let a = one.run_round(&game).unwrap();
            let b = two.run_round(&game).unwrap();
            assert_eq!(one.server.w, two.server.w);
            assert_eq!(a.grad_norm_sq, b.grad_norm_sq);
            assert_eq!(2 * a.bits_up, b.bits_up);
        }
    }

    #[test]
    fn step_limit_values() {
        assert_eq!(step_limit(4, 1, 0.0), 0.5);
        let l = 1.0;
        assert!((step_limit(1, 1, l) - 1.0 / (6.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn error_feedback_bound_examples() {
        assert_eq!(error_feedback_bound(0.3, 1.0, 5.0, 2.0, 3).unwrap(), 0.0);
        let b = error_feedback_bound(0.01, 0.5, 1.0, 1.0, 10).unwrap();
        assert!((b - 1.76e-3).abs() < 1e-15, "{b}");
        let b2 = error_feedback_bound(0.02, 0.5, 1.0, 1.0, 10).unwrap();
        assert!((b2 / b - 4.0).abs() < 1e-12);
        assert!(error_feedback_bound(0.01, 0.0, 1.0, 1.0, 10).is_err());
        assert!(error_feedback_bound(0.01, 1.5, 1.0, 1.0, 10).is_err());
    }

    fn inputs() -> ConvergenceInputs {
        ConvergenceInputs {
            eta: 0.05,
            batch: 4,
            workers: 1,
            lipschitz: 1.0,
            grad_bound: 2.0,
            sigma: 0.0,
            delta: 1.0,
            init_dist_sq: 0.0,
            rounds: 100,
        }
    }

    #[test]
    fn convergence_bound_examples() {
        assert_eq!(convergence_bound(&inputs()).unwrap(), 0.0);

        let x = ConvergenceInputs { sigma: 1.5, delta: 0.25, workers: 3, init_dist_sq: 2.0, ..inputs() };
        let terms = convergence_terms(&x).unwrap();
        let far = convergence_terms(&ConvergenceInputs { rounds: u64::MAX, ..x }).unwrap();
        assert!(far[0] < 1e-12);
        assert_eq!(&terms[1..], &far[1..]);
        assert!((terms[0] - 4.0 * 2.0 / (0.05 * 0.05 * 100.0)).abs() < 1e-9);

        // σ = 0, δ = 1: only 3456 L²G²(M−1)/(BM²) survives, ratio → 1/2 as M doubles.
        let at = |m| convergence_bound(&ConvergenceInputs { workers: m, ..inputs() }).unwrap();
        assert!((at(2000) / at(1000) - 0.5).abs() < 1e-3);
        assert!((at(2) - 3456.0 * 4.0 / (4.0 * 4.0)).abs() < 1e-9);

        assert!(convergence_bound(&ConvergenceInputs { rounds: 0, ..inputs() }).is_err());
        assert!(convergence_bound(&ConvergenceInputs { delta: 0.0, ..inputs() }).is_err());
    }
}
