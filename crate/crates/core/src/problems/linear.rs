use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{check_batch, check_input, ProblemConstants, SaddleProblem};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::vector::ParamVector;

/// `L(θ, φ) = (μ/2)‖θ‖² + θᵀAφ − (μ/2)‖φ‖²` with operator
/// `F(w) = (μθ + Aφ, −Aᵀθ + μφ)` and saddle point `w* = 0`.
///
/// `μ = 0` is the bilinear game, `μ > 0` the strongly monotone quadratic
/// game, and the 1×1 bilinear case with `A = 1` is DiracGAN. Sampling adds
/// independent `N(0, σ²)` noise to every coordinate, so the per-sample
/// variance is `σ²·dim`.
#[derive(Clone, Debug)]
pub struct LinearGame {
    name: &'static str,
    a: DMatrix<f64>,
    mu: f64,
    sigma: f64,
    domain_radius: f64,
    sigma_max: f64,
}

impl LinearGame {
    fn build(name: &'static str, a: DMatrix<f64>, mu: f64, sigma: f64, domain_radius: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidArgument("coupling matrix must be nonempty".into()));
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("coupling matrix"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {sigma}")));
        }
        if !(domain_radius > 0.0) {
            return Err(Error::InvalidArgument("domain radius must be positive".into()));
        }
        let sigma_max = a.singular_values().max();
        Ok(Self { name, a, mu, sigma, domain_radius, sigma_max })
    }

    pub fn bilinear(a: DMatrix<f64>, sigma: f64, domain_radius: f64) -> Result<Self> {
        Self::build("bilinear", a, 0.0, sigma, domain_radius)
    }

    pub fn quadratic(mu: f64, a: DMatrix<f64>, sigma: f64, domain_radius: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        Self::build("quadratic", a, mu, sigma, domain_radius)
    }

    pub fn dirac(sigma: f64, domain_radius: f64) -> Result<Self> {
        Self::build("dirac", DMatrix::from_element(1, 1, 1.0), 0.0, sigma, domain_radius)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn noise_scale(&self) -> f64 {
        self.sigma
    }

    fn halves<'a>(&self, w: &'a ParamVector) -> (&'a [f64], &'a [f64]) {
        w.split_at(self.a.nrows())
    }
}

impl SaddleProblem for LinearGame {
    fn name(&self) -> &'static str {
        self.name
    }

    fn dim(&self) -> usize {
        self.a.nrows() + self.a.ncols()
    }

    fn theta_dim(&self) -> usize {
        self.a.nrows()
    }

    fn operator(&self, w: &ParamVector) -> Result<ParamVector> {
        check_input(self, w)?;
        let (theta, phi) = self.halves(w);
        let theta_v = DVector::from_column_slice(theta);
        let phi_v = DVector::from_column_slice(phi);
        let g_theta = &self.a * &phi_v + self.mu * &theta_v;
        let g_phi = self.mu * &phi_v - self.a.tr_mul(&theta_v);
        Ok(ParamVector::new(g_theta.iter().chain(g_phi.iter()).copied().collect()))
    }

    fn sample(&self, w: &ParamVector, rng: &mut StreamRng) -> Result<ParamVector> {
        self.stochastic(w, 1, rng)
    }

    fn stochastic(&self, w: &ParamVector, batch: usize, rng: &mut StreamRng) -> Result<ParamVector> {
        check_batch(batch)?;
        let mut f = self.operator(w)?;
        if self.sigma == 0.0 {
            return Ok(f);
        }
        // Mean of `batch` Gaussian perturbations, drawn sample by sample.
        let mut noise = vec![0.0; f.dim()];
        for _ in 0..batch {
            for n in noise.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *n += self.sigma * z;
            }
        }
        let b = batch as f64;
        f.iter_mut().zip(&noise).for_each(|(x, n)| *x += n / b);
        Ok(f)
    }

    fn player_losses(&self, w: &ParamVector) -> Result<(f64, f64)> {
        check_input(self, w)?;
        let (theta, phi) = self.halves(w);
        let theta_v = DVector::from_column_slice(theta);
        let phi_v = DVector::from_column_slice(phi);
        let coupling = theta_v.dot(&(&self.a * &phi_v));
        let value = 0.5 * self.mu * theta_v.norm_squared() + coupling - 0.5 * self.mu * phi_v.norm_squared();
        Ok((value, -value))
    }

    /// `L = ‖[[μI, A], [−Aᵀ, μI]]‖₂ = √(μ² + σ_max(A)²)`, and
    /// `‖F(w)‖ ≤ L·‖w‖₂ ≤ L·R·√dim` on the box.
    fn constants(&self) -> ProblemConstants {
        let lipschitz = (self.mu * self.mu + self.sigma_max * self.sigma_max).sqrt();
        let root_dim = (self.dim() as f64).sqrt();
        ProblemConstants {
            lipschitz,
            grad_bound: lipschitz * self.domain_radius * root_dim,
            noise: self.sigma * root_dim,
            domain_radius: self.domain_radius,
        }
    }

    fn saddle(&self) -> Option<ParamVector> {
        Some(ParamVector::zeros(self.dim()))
    }

    fn default_init(&self) -> ParamVector {
        ParamVector::new(vec![1.0; self.dim()])
    }
}
