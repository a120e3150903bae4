//! Closed-form error of the compressors and δ certificates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::{grid_position, level_count, scale_of, top_k_indices, CompressorSpec, ScaleNorm};
use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "delta", rename_all = "lowercase")]
pub enum DeltaBound {
    Certified(f64),
    Uncertified,
}

impl DeltaBound {
    pub fn value(&self) -> Option<f64> {
        match *self {
            DeltaBound::Certified(d) => Some(d),
            DeltaBound::Uncertified => None,
        }
    }
}

/// Exact `E‖Q(v) − v‖²`.
///
/// For stochastic rounding each element sits between grid points
/// `s·B_r ≤ |v_i| ≤ s·B_{r+1}` and contributes
/// `|v_i|·s·(B_r + B_{r+1}) − B_r·B_{r+1}·s² − v_i²`, evaluated here in the
/// factored form `s²·(x − B_r)(B_{r+1} − x)` with `x = |v_i|/s`, which cannot
/// go negative through cancellation. For top-k it is the deterministic residual.
pub fn expected_error_sq(v: &ParamVector, spec: &CompressorSpec) -> Result<f64> {
    spec.validate(v.dim())?;
    v.ensure_finite("error input")?;
    match *spec {
        CompressorSpec::Identity => Err(Error::InvalidCompressor(
            "identity has zero error; expected_error_sq is undefined for it".into(),
        )),
        CompressorSpec::TopK { k } => {
            let mut kept = vec![false; v.dim()];
            top_k_indices(v, k).iter().for_each(|&i| kept[i as usize] = true);
            let residual: f64 = v
                .iter()
                .zip(&kept)
                .filter(|(_, &keep)| !keep)
                .map(|(x, _)| x * x)
                .sum();
            Ok(residual)
        }
        CompressorSpec::StochasticBits { bits, norm } => {
            let levels = level_count(bits);
            let scale = scale_of(v, norm);
            if scale == 0.0 {
                return Ok(0.0);
            }
            let unit = scale / levels as f64;
            Ok(v
                .iter()
                .map(|&x| {
                    let (_, frac) = grid_position(x.abs(), scale, levels);
                    unit * unit * frac * (1.0 - frac)
                })
                .sum())
        }
    }
}

/// Provable δ for a compressor on `dim`-element vectors.
///
/// Stochastic rounding with max-norm scaling contributes at most
/// `s²·B_1²/4` per element, and `‖v‖² ≥ s²`, so `δ = 1 − d/(4L²)` whenever
/// that is positive. Euclidean scaling is only certified for `d = 1`.
pub fn delta_lower_bound(spec: &CompressorSpec, dim: usize) -> Result<DeltaBound> {
    spec.validate(dim)?;
    Ok(match *spec {
        CompressorSpec::Identity => DeltaBound::Certified(1.0),
        CompressorSpec::TopK { k } => DeltaBound::Certified(k as f64 / dim as f64),
        CompressorSpec::StochasticBits { norm: ScaleNorm::Euclidean, .. } if dim == 1 => {
            DeltaBound::Certified(1.0)
        }
        CompressorSpec::StochasticBits { norm: ScaleNorm::Euclidean, .. } => DeltaBound::Uncertified,
        CompressorSpec::StochasticBits { bits, norm: ScaleNorm::Max } => {
            let levels = level_count(bits) as f64;
            let ratio = dim as f64 / (4.0 * levels * levels);
            if ratio < 1.0 {
                DeltaBound::Certified(1.0 - ratio)
            } else {
                DeltaBound::Uncertified
            }
        }
    })
}

fn adversarial_sample<R: Rng + ?Sized>(spec: &CompressorSpec, dim: usize, rng: &mut R) -> Vec<f64> {
    let sign = |rng: &mut R| if rng.gen::<bool>() { 1.0 } else { -1.0 };
    match *spec {
        // Equal magnitudes are the tight case for top-k.
        CompressorSpec::Identity | CompressorSpec::TopK { .. } => {
            let mag = rng.gen_range(0.1..10.0);
            (0..dim).map(|_| sign(rng) * mag).collect()
        }
        // One element on the top level, the rest near the midpoint of the first
        // segment, where the rounding variance peaks and ‖v‖ is smallest.
        CompressorSpec::StochasticBits { bits, .. } => {
            let levels = level_count(bits) as f64;
            let scale = rng.gen_range(0.1..10.0);
            let peak = rng.gen_range(0..dim);
            (0..dim)
                .map(|i| {
                    if i == peak {
                        sign(rng) * scale
                    } else {
                        let x = (0.5 + rng.gen_range(-0.05..0.05)) / levels;
                        sign(rng) * scale * x
                    }
                })
                .collect()
        }
    }
}

/// Empirical δ: `1 − max E‖Q(v) − v‖²/‖v‖²` over Gaussian, heavy-tailed
/// (Student-t, 2 dof) and adversarial samples, cycled in that order.
pub fn certify_delta<R: Rng + ?Sized>(
    spec: &CompressorSpec,
    dim: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    spec.validate(dim)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if matches!(spec, CompressorSpec::Identity) {
        return Ok(1.0);
    }
    let heavy = StudentT::new(2.0).expect("valid dof");
    let mut worst = 0.0_f64;
    for i in 0..n_samples {
        let values: Vec<f64> = match i % 3 {
            0 => (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
            1 => (0..dim).map(|_| heavy.sample(rng)).collect(),
            _ => adversarial_sample(spec, dim, rng),
        };
        let v = ParamVector::new(values);
        let norm_sq = v.norm_sq();
        if norm_sq == 0.0 || !norm_sq.is_finite() {
            continue;
        }
        worst = worst.max(expected_error_sq(&v, spec)? / norm_sq);
    }
    Ok(1.0 - worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    const MAX8: CompressorSpec = CompressorSpec::StochasticBits { bits: 8, norm: ScaleNorm::Max };

    /// The expanded closed form `|v|·s·(B_r + B_{r+1}) − B_r B_{r+1} s² − v²`,
    /// with the segment found by a linear scan over the grid.
    fn expanded_form(v: &[f64], bits: u32, scale: f64) -> f64 {
        let levels = level_count(bits);
        let grid: Vec<f64> = (0..=levels).map(|r| r as f64 / levels as f64).collect();
        v.iter()
            .map(|&x| {
                let a = x.abs();
                let r = (0..levels as usize)
                    .find(|&r| grid[r] * scale <= a && a < grid[r + 1] * scale)
                    .unwrap_or(levels as usize - 1);
                a * scale * (grid[r + 1] + grid[r]) - grid[r] * grid[r + 1] * scale * scale - a * a
            })
            .sum()
    }

    #[test]
    fn two_bit_example() {
        let v = ParamVector::new(vec![1.0, 0.5]);
        let spec = CompressorSpec::StochasticBits { bits: 2, norm: ScaleNorm::Max };
        assert_eq!(expected_error_sq(&v, &spec).unwrap(), 0.25);
        assert_eq!(expanded_form(&v, 2, 1.0), 0.25);
    }

    #[test]
    fn top_k_example() {
        let v = ParamVector::new(vec![3.0, 1.0, -2.0, 0.5]);
        assert_eq!(expected_error_sq(&v, &CompressorSpec::TopK { k: 2 }).unwrap(), 1.25);
    }

    #[test]
    fn single_element_sits_on_the_grid() {
        for bits in [2, 4, 8, 16] {
            for norm in [ScaleNorm::Max, ScaleNorm::Euclidean] {
                let spec = CompressorSpec::StochasticBits { bits, norm };
                assert_eq!(expected_error_sq(&ParamVector::new(vec![-3.7]), &spec).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn identity_is_rejected() {
        assert!(expected_error_sq(&ParamVector::new(vec![1.0]), &CompressorSpec::Identity).is_err());
    }

    #[test]
    fn factored_matches_expanded_form() {
        let mut rng = stream(3, 0, 0, Purpose::Certify);
        for bits in [2, 3, 4, 8] {
            for _ in 0..200 {
                let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let pv = ParamVector::new(v.clone());
                let spec = CompressorSpec::StochasticBits { bits, norm: ScaleNorm::Max };
                let a = expected_error_sq(&pv, &spec).unwrap();
                let b = expanded_form(&v, bits, pv.max_abs());
                assert!((a - b).abs() <= 1e-12 * (1.0 + pv.norm_sq()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn delta_bounds() {
        assert_eq!(
            delta_lower_bound(&CompressorSpec::TopK { k: 2 }, 4).unwrap(),
            DeltaBound::Certified(0.5)
        );
        assert_eq!(delta_lower_bound(&CompressorSpec::Identity, 17).unwrap(), DeltaBound::Certified(1.0));
        let d = delta_lower_bound(&MAX8, 100).unwrap().value().unwrap();
        assert!((d - (1.0 - 100.0 / (4.0 * 127.0 * 127.0))).abs() < 1e-15);
        assert!((d - 0.998450).abs() < 5e-7);
        // 2 bits: one level, certified only for d < 4
        let two = CompressorSpec::StochasticBits { bits: 2, norm: ScaleNorm::Max };
        assert_eq!(delta_lower_bound(&two, 3).unwrap(), DeltaBound::Certified(0.25));
        assert_eq!(delta_lower_bound(&two, 4).unwrap(), DeltaBound::Uncertified);
        let euc = CompressorSpec::StochasticBits { bits: 8, norm: ScaleNorm::Euclidean };
        assert_eq!(delta_lower_bound(&euc, 1).unwrap(), DeltaBound::Certified(1.0));
        assert_eq!(delta_lower_bound(&euc, 2).unwrap(), DeltaBound::Uncertified);
    }

    #[test]
    fn certify_trivial_cases() {
        let mut rng = stream(5, 0, 0, Purpose::Certify);
        assert_eq!(certify_delta(&CompressorSpec::Identity, 8, 10, &mut rng).unwrap(), 1.0);
        assert_eq!(certify_delta(&CompressorSpec::TopK { k: 8 }, 8, 100, &mut rng).unwrap(), 1.0);
        assert!(certify_delta(&CompressorSpec::TopK { k: 2 }, 8, 0, &mut rng).is_err());
    }

    #[test]
    fn certify_top_k_hits_the_tight_case() {
        let mut rng = stream(5, 0, 0, Purpose::Certify);
        let est = certify_delta(&CompressorSpec::TopK { k: 3 }, 12, 30, &mut rng).unwrap();
        assert!((est - 0.25).abs() < 1e-12, "{est}");
    }
}
