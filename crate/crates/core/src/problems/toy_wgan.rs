//! A two-layer WGAN on a 2-D Gaussian mixture with hand-written backprop.
//!
//! Generator `G_θ(z) = W₂ tanh(W₁z + b₁) + b₂` maps `z ∈ R²` to `x ∈ R²`;
//! critic `D_φ(x) = vᵀ tanh(V₁x + c₁)`. The critic has no output bias: both
//! losses are invariant to it, so its gradient is identically zero.
//!
//! Losses, over fixed empirical sets of real points `x_i` and noise `z_j`:
//! `L_G = −mean_j D(G(z_j))`, `L_D = −mean_i D(x_i) + mean_j D(G(z_j))`.
//! A single stochastic sample draws one `i` and one `j` uniformly, which makes
//! it unbiased for the empirical operator.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_input, ProblemConstants, SaddleProblem, DEFAULT_DOMAIN_RADIUS};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, StreamRng};
use crate::vector::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWganConfig {
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    pub modes: usize,
    pub data_radius: f64,
    pub data_std: f64,
    pub samples: usize,
    pub seed: u64,
    pub domain_radius: f64,
    /// Points drawn in the domain box to estimate `L`, `G` and the noise level.
    pub estimation_samples: usize,
}

impl Default for ToyWganConfig {
    fn default() -> Self {
        Self {
            gen_hidden: 8,
            disc_hidden: 8,
            modes: 4,
            data_radius: 2.0,
            data_std: 0.1,
            samples: 256,
            seed: 0,
            domain_radius: DEFAULT_DOMAIN_RADIUS,
            estimation_samples: 200,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    gh: usize,
    dh: usize,
}

impl Layout {
    fn theta_dim(&self) -> usize {
        5 * self.gh + 2
    }

    fn dim(&self) -> usize {
        self.theta_dim() + 4 * self.dh
    }
}

/// Borrowed views of the flat parameter vector.
struct Params<'a> {
    gw1: &'a [f64],
    gb1: &'a [f64],
    gw2: &'a [f64],
    gb2: &'a [f64],
    dw1: &'a [f64],
    db1: &'a [f64],
    dv: &'a [f64],
}

impl<'a> Params<'a> {
    fn split(layout: Layout, w: &'a [f64]) -> Self {
        let (gw1, rest) = w.split_at(2 * layout.gh);
        let (gb1, rest) = rest.split_at(layout.gh);
        let (gw2, rest) = rest.split_at(2 * layout.gh);
        let (gb2, rest) = rest.split_at(2);
        let (dw1, rest) = rest.split_at(2 * layout.dh);
        let (db1, dv) = rest.split_at(layout.dh);
        Self { gw1, gb1, gw2, gb2, dw1, db1, dv }
    }
}

#[derive(Clone, Debug)]
pub struct ToyWgan {
    layout: Layout,
    real: Vec<[f64; 2]>,
    noise: Vec<[f64; 2]>,
    init: ParamVector,
    constants: ProblemConstants,
}

impl ToyWgan {
    pub fn new(config: &ToyWganConfig) -> Result<Self> {
        if config.gen_hidden == 0 || config.gen_hidden > 16 || config.disc_hidden == 0 || config.disc_hidden > 16 {
            return Err(Error::InvalidArgument("hidden widths must lie in [1, 16]".into()));
        }
        if config.modes == 0 || config.samples == 0 {
            return Err(Error::InvalidArgument("modes and samples must be positive".into()));
        }
        if !(config.domain_radius > 0.0) || !(config.data_std >= 0.0) {
            return Err(Error::InvalidArgument("domain radius and data std must be nonnegative".into()));
        }
        let layout = Layout { gh: config.gen_hidden, dh: config.disc_hidden };
        let mut rng = stream(config.seed, 0, 0, Purpose::Problem);
        let normal = |rng: &mut StreamRng| -> f64 { StandardNormal.sample(rng) };
        let real = (0..config.samples)
            .map(|_| {
                let mode = rng.gen_range(0..config.modes) as f64;
                let angle = TAU * mode / config.modes as f64;
                [
                    config.data_radius * angle.cos() + config.data_std * normal(&mut rng),
                    config.data_radius * angle.sin() + config.data_std * normal(&mut rng),
                ]
            })
            .collect();
        let noise = (0..config.samples)
            .map(|_| [normal(&mut rng), normal(&mut rng)])
            .collect();
        let init = init_params(layout, &mut stream(config.seed, 0, 0, Purpose::Init));
        let mut problem = Self {
            layout,
            real,
            noise,
            init,
            constants: ProblemConstants {
                lipschitz: 0.0,
                grad_bound: 0.0,
                noise: 0.0,
                domain_radius: config.domain_radius,
            },
        };
        problem.constants = problem.estimate_constants(config)?;
        Ok(problem)
    }

    /// Critic value at `x`; adds `scale·∇_φ D(x)` into `grad_phi` and returns `(D, ∂D/∂x)`.
    fn critic(&self, p: &Params, x: [f64; 2], scale: f64, grad_phi: &mut [f64]) -> (f64, [f64; 2]) {
        let dh = self.layout.dh;
        let (g_w1, rest) = grad_phi.split_at_mut(2 * dh);
        let (g_b1, g_v) = rest.split_at_mut(dh);
        let mut value = 0.0;
        let mut dx = [0.0; 2];
        for j in 0..dh {
            let h = (p.dw1[2 * j] * x[0] + p.dw1[2 * j + 1] * x[1] + p.db1[j]).tanh();
            value += p.dv[j] * h;
            let back = p.dv[j] * (1.0 - h * h);
            g_v[j] += scale * h;
            g_b1[j] += scale * back;
            g_w1[2 * j] += scale * back * x[0];
            g_w1[2 * j + 1] += scale * back * x[1];
            dx[0] += back * p.dw1[2 * j];
            dx[1] += back * p.dw1[2 * j + 1];
        }
        (value, dx)
    }

    fn critic_value(&self, p: &Params, x: [f64; 2]) -> f64 {
        (0..self.layout.dh)
            .map(|j| p.dv[j] * (p.dw1[2 * j] * x[0] + p.dw1[2 * j + 1] * x[1] + p.db1[j]).tanh())
            .sum()
    }

    fn generate(&self, p: &Params, z: [f64; 2], hidden: &mut [f64]) -> [f64; 2] {
        let gh = self.layout.gh;
        let mut x = [p.gb2[0], p.gb2[1]];
        for j in 0..gh {
            let h = (p.gw1[2 * j] * z[0] + p.gw1[2 * j + 1] * z[1] + p.gb1[j]).tanh();
            hidden[j] = h;
            x[0] += p.gw2[j] * h;
            x[1] += p.gw2[gh + j] * h;
        }
        x
    }

    /// Adds `scale·∇_θ` of a loss whose gradient in the generated point is `dx`.
    fn generator_backward(&self, p: &Params, z: [f64; 2], hidden: &[f64], dx: [f64; 2], scale: f64, grad_theta: &mut [f64]) {
        let gh = self.layout.gh;
        let (g_w1, rest) = grad_theta.split_at_mut(2 * gh);
        let (g_b1, rest) = rest.split_at_mut(gh);
        let (g_w2, g_b2) = rest.split_at_mut(2 * gh);
        g_b2[0] += scale * dx[0];
        g_b2[1] += scale * dx[1];
        for j in 0..gh {
            let h = hidden[j];
            g_w2[j] += scale * dx[0] * h;
            g_w2[gh + j] += scale * dx[1] * h;
            let dh = (p.gw2[j] * dx[0] + p.gw2[gh + j] * dx[1]) * (1.0 - h * h);
            g_b1[j] += scale * dh;
            g_w1[2 * j] += scale * dh * z[0];
            g_w1[2 * j + 1] += scale * dh * z[1];
        }
    }

    /// Gradient contribution of one fake sample: θ part of `−D(G(z))`, φ part of `+D(G(z))`.
    fn fake_term(&self, p: &Params, z: [f64; 2], scale: f64, grad: &mut [f64], hidden: &mut [f64]) {
        let (grad_theta, grad_phi) = grad.split_at_mut(self.layout.theta_dim());
        let x = self.generate(p, z, hidden);
        let (_, dx) = self.critic(p, x, scale, grad_phi);
        self.generator_backward(p, z, hidden, [-dx[0], -dx[1]], scale, grad_theta);
    }

    /// Gradient contribution of one real sample: φ part of `−D(x)`.
    fn real_term(&self, p: &Params, x: [f64; 2], scale: f64, grad: &mut [f64]) {
        let grad_phi = &mut grad[self.layout.theta_dim()..];
        self.critic(p, x, -scale, grad_phi);
    }

    /// Exact per-sample variance `E‖F(w; ξ) − F(w)‖²` over the empirical sets.
    pub fn per_sample_variance(&self, w: &ParamVector) -> Result<f64> {
        check_input(self, w)?;
        let p = Params::split(self.layout, w);
        let dim = self.dim();
        let mut hidden = vec![0.0; self.layout.gh];
        let spread = |terms: &[Vec<f64>]| -> f64 {
            let n = terms.len() as f64;
            let mean: Vec<f64> = (0..dim).map(|k| terms.iter().map(|t| t[k]).sum::<f64>() / n).collect();
            terms
                .iter()
                .map(|t| t.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum::<f64>()
                / n
        };
        let fake: Vec<Vec<f64>> = self
            .noise
            .iter()
            .map(|&z| {
                let mut g = vec![0.0; dim];
                self.fake_term(&p, z, 1.0, &mut g, &mut hidden);
                g
            })
            .collect();
        let real: Vec<Vec<f64>> = self
            .real
            .iter()
            .map(|&x| {
                let mut g = vec![0.0; dim];
                self.real_term(&p, x, 1.0, &mut g);
                g
            })
            .collect();
        Ok(spread(&fake) + spread(&real))
    }

    fn estimate_constants(&self, config: &ToyWganConfig) -> Result<ProblemConstants> {
        let radius = config.domain_radius;
        let mut rng = stream(config.seed, 0, 1, Purpose::Problem);
        let dim = self.dim();
        let box_point = |rng: &mut StreamRng| {
            ParamVector::new((0..dim).map(|_| rng.gen_range(-radius..=radius)).collect())
        };
        let (mut lip, mut grad, mut var) = (0.0_f64, 0.0_f64, 0.0_f64);
        for _ in 0..config.estimation_samples.max(1) {
            let w = box_point(&mut rng);
            let f = self.operator(&w)?;
            grad = grad.max(f.norm());
            var = var.max(self.per_sample_variance(&w)?);
            let far = box_point(&mut rng);
            let near = ParamVector::new(
                w.iter()
                    .map(|x| (x + 1e-3 * radius * rng.gen_range(-1.0..1.0)).clamp(-radius, radius))
                    .collect(),
            );
            for other in [far, near] {
                let dw = w.distance(&other)?;
                if dw > 0.0 {
                    lip = lip.max(f.distance(&self.operator(&other)?)? / dw);
                }
            }
        }
        Ok(ProblemConstants {
            lipschitz: 2.0 * lip,
            grad_bound: 2.0 * grad,
            noise: (2.0 * var).sqrt(),
            domain_radius: radius,
        })
    }
}

fn init_params(layout: Layout, rng: &mut StreamRng) -> ParamVector {
    let mut out = Vec::with_capacity(layout.dim());
    let mut fill = |n: usize, fan_in: usize, rng: &mut StreamRng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        out.extend((0..n).map(|_| rng.gen_range(-bound..bound)));
    };
    fill(2 * layout.gh, 2, rng);
    fill(layout.gh, 2, rng);
    fill(2 * layout.gh, layout.gh, rng);
    fill(2, layout.gh, rng);
    fill(2 * layout.dh, 2, rng);
    fill(layout.dh, 2, rng);
    fill(layout.dh, layout.dh, rng);
    ParamVector::new(out)
}

impl SaddleProblem for ToyWgan {
    fn name(&self) -> &'static str {
        "toy_wgan"
    }

    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn theta_dim(&self) -> usize {
        self.layout.theta_dim()
    }

    fn operator(&self, w: &ParamVector) -> Result<ParamVector> {
        check_input(self, w)?;
        let p = Params::split(self.layout, w);
        let mut grad = vec![0.0; self.dim()];
        let mut hidden = vec![0.0; self.layout.gh];
        let fake_scale = 1.0 / self.noise.len() as f64;
        for &z in &self.noise {
            self.fake_term(&p, z, fake_scale, &mut grad, &mut hidden);
        }
        let real_scale = 1.0 / self.real.len() as f64;
        for &x in &self.real {
            self.real_term(&p, x, real_scale, &mut grad);
        }
        Ok(ParamVector::new(grad))
    }

    fn sample(&self, w: &ParamVector, rng: &mut StreamRng) -> Result<ParamVector> {
        check_input(self, w)?;
        let i = rng.gen_range(0..self.real.len());
        let j = rng.gen_range(0..self.noise.len());
        let p = Params::split(self.layout, w);
        let mut grad = vec![0.0; self.dim()];
        let mut hidden = vec![0.0; self.layout.gh];
        self.fake_term(&p, self.noise[j], 1.0, &mut grad, &mut hidden);
        self.real_term(&p, self.real[i], 1.0, &mut grad);
        Ok(ParamVector::new(grad))
    }

    fn player_losses(&self, w: &ParamVector) -> Result<(f64, f64)> {
        check_input(self, w)?;
        let p = Params::split(self.layout, w);
        let mut hidden = vec![0.0; self.layout.gh];
        let fake = self
            .noise
            .iter()
            .map(|&z| {
                let x = self.generate(&p, z, &mut hidden);
                self.critic_value(&p, x)
            })
            .sum::<f64>()
            / self.noise.len() as f64;
        let real = self.real.iter().map(|&x| self.critic_value(&p, x)).sum::<f64>() / self.real.len() as f64;
        Ok((-fake, fake - real))
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn saddle(&self) -> Option<ParamVector> {
        None
    }

    fn default_init(&self) -> ParamVector {
        self.init.clone()
    }
}
