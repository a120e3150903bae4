//! δ-approximate gradient compressors.
//!
//! A compressor `Q` is δ-approximate when `‖Q(v) − v‖² ≤ (1 − δ)‖v‖²`
//! (deterministically for top-k, in expectation for stochastic rounding).
//! [`compress`] produces a [`QuantizedMessage`], which is both the in-memory
//! representation and, via [`QuantizedMessage::encode`], the wire payload a
//! worker pushes to the server.

mod analysis;
mod codec;

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

pub use analysis::{certify_delta, delta_lower_bound, expected_error_sq, DeltaBound};
pub use codec::CodecError;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 32;

/// Which norm supplies the scale `s` of stochastic rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleNorm {
    Euclidean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressorSpec {
    Identity,
    TopK { k: usize },
    /// `bits` per element: one sign bit plus `bits − 1` level bits.
    StochasticBits { bits: u32, norm: ScaleNorm },
}

impl CompressorSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidCompressor("dimension must be at least 1".into()));
        }
        if dim > u32::MAX as usize {
            return Err(Error::InvalidCompressor(format!("dimension {dim} exceeds u32")));
        }
        match *self {
            CompressorSpec::Identity => Ok(()),
            CompressorSpec::TopK { k } if k == 0 || k > dim => Err(Error::InvalidCompressor(
                format!("top-k requires 1 <= k <= d, got k={k}, d={dim}"),
            )),
            CompressorSpec::TopK { .. } => Ok(()),
            CompressorSpec::StochasticBits { bits, .. } if !(MIN_BITS..=MAX_BITS).contains(&bits) => {
                Err(Error::InvalidCompressor(format!(
                    "bits must lie in [{MIN_BITS}, {MAX_BITS}], got {bits}"
                )))
            }
            CompressorSpec::StochasticBits { .. } => Ok(()),
        }
    }

    /// Payload size in bits for a `dim`-element vector, header excluded.
    pub fn payload_bits(&self, dim: usize) -> u64 {
        let d = dim as u64;
        match *self {
            CompressorSpec::Identity => 64 * d,
            CompressorSpec::TopK { k } => 96 * k as u64,
            CompressorSpec::StochasticBits { bits, .. } => bits as u64 * d,
        }
    }

    pub fn header_bits(&self) -> u64 {
        8 * codec::header_len(self) as u64
    }
}

/// Number of positive levels `2^(bits−1) − 1`.
pub fn level_count(bits: u32) -> u64 {
    (1u64 << (bits - 1)) - 1
}

/// Dequantized value of a signed level on the uniform grid `r / levels`.
#[inline]
pub(crate) fn level_value(scale: f64, level: i64, levels: u64) -> f64 {
    scale * (level as f64 / levels as f64)
}

/// Position of `|x| / scale` on the grid: lower level `r` and the fractional
/// distance to `r + 1`, which is the probability of rounding up.
#[inline]
pub(crate) fn grid_position(abs: f64, scale: f64, levels: u64) -> (u64, f64) {
    let a = abs / scale * levels as f64;
    if a >= levels as f64 {
        return (levels, 0.0);
    }
    let r = a.floor();
    (r as u64, a - r)
}

pub(crate) fn scale_of(v: &ParamVector, norm: ScaleNorm) -> f64 {
    match norm {
        ScaleNorm::Euclidean => v.scaled_norm(),
        ScaleNorm::Max => v.max_abs(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Identity { values: Vec<f64> },
    /// Retained entries, sorted by index.
    TopK { indices: Vec<u32>, values: Vec<f64> },
    /// Signed levels in `[−L, L]`, `L = 2^(bits−1) − 1`. Level 0 is never negative.
    StochasticBits { bits: u32, norm: ScaleNorm, levels: Vec<i32> },
}

/// A compressed vector. The JSON rendering (`serde_json`) is the debug form
/// used by fixtures; [`encode`](Self::encode) gives the binary wire form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMessage {
    pub dim: usize,
    pub scale: f64,
    pub payload: Payload,
}

impl QuantizedMessage {
    pub fn spec(&self) -> CompressorSpec {
        match &self.payload {
            Payload::Identity { .. } => CompressorSpec::Identity,
            Payload::TopK { indices, .. } => CompressorSpec::TopK { k: indices.len() },
            Payload::StochasticBits { bits, norm, .. } => CompressorSpec::StochasticBits {
                bits: *bits,
                norm: *norm,
            },
        }
    }

    pub fn payload_bits(&self) -> u64 {
        self.spec().payload_bits(self.dim)
    }

    pub fn header_bits(&self) -> u64 {
        self.spec().header_bits()
    }

    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, CodecError> {
        codec::decode(bytes)
    }
}

/// Compresses `v`. Stochastic rounding draws exactly one uniform per element;
/// identity and top-k draw nothing.
pub fn compress<R: Rng + ?Sized>(
    v: &ParamVector,
    spec: &CompressorSpec,
    rng: &mut R,
) -> Result<QuantizedMessage> {
    spec.validate(v.dim())?;
    v.ensure_finite("compressor input")?;
    let dim = v.dim();
    let message = match *spec {
        CompressorSpec::Identity => QuantizedMessage {
            dim,
            scale: 1.0,
            payload: Payload::Identity { values: v.to_vec() },
        },
        CompressorSpec::TopK { k } => {
            let indices = top_k_indices(v, k);
            let values = indices.iter().map(|&i| v[i as usize]).collect();
            QuantizedMessage {
                dim,
                scale: 1.0,
                payload: Payload::TopK { indices, values },
            }
        }
        CompressorSpec::StochasticBits { bits, norm } => {
            let levels = level_count(bits);
            let scale = scale_of(v, norm);
            if !scale.is_finite() {
                return Err(Error::NonFinite("compressor scale"));
            }
            let mut out = Vec::with_capacity(dim);
            for &x in v.iter() {
                let u: f64 = rng.gen();
                if scale == 0.0 {
                    out.push(0);
                    continue;
                }
                let (r, frac) = grid_position(x.abs(), scale, levels);
                let level = if u < frac { r + 1 } else { r } as i32;
                out.push(if x < 0.0 { -level } else { level });
            }
            QuantizedMessage {
                dim,
                scale,
                payload: Payload::StochasticBits { bits, norm, levels: out },
            }
        }
    };
    Ok(message)
}

/// Dense reconstruction; exact inverse of the encoding.
pub fn decompress(msg: &QuantizedMessage) -> ParamVector {
    match &msg.payload {
        Payload::Identity { values } => ParamVector::new(values.clone()),
        Payload::TopK { indices, values } => {
            let mut out = vec![0.0; msg.dim];
            for (&i, &x) in indices.iter().zip(values) {
                out[i as usize] = x;
            }
            ParamVector::new(out)
        }
        Payload::StochasticBits { bits, levels, .. } => {
            let count = level_count(*bits);
            ParamVector::new(
                levels
                    .iter()
                    .map(|&l| level_value(msg.scale, l as i64, count))
                    .collect(),
            )
        }
    }
}

/// Decodes wire bytes and reconstructs the dense vector.
pub fn decompress_bytes(bytes: &[u8]) -> Result<ParamVector> {
    Ok(decompress(&QuantizedMessage::decode(bytes)?))
}

/// Indices of the `k` largest magnitudes, ties to the lower index, returned ascending.
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..v.len() as u32).collect();
    let by_magnitude = |a: &u32, b: &u32| -> Ordering {
        v[*b as usize]
            .abs()
            .total_cmp(&v[*a as usize].abs())
            .then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k, by_magnitude);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn rng() -> crate::rng::StreamRng {
        stream(11, 0, 0, Purpose::Compressor)
    }

    #[test]
    fn top_k_keeps_largest() {
        let v = ParamVector::new(vec![3.0, 1.0, -2.0, 0.5]);
        let msg = compress(&v, &CompressorSpec::TopK { k: 2 }, &mut rng()).unwrap();
        let q = decompress(&msg);
        assert_eq!(q.as_slice(), &[3.0, 0.0, -2.0, 0.0]);
        let err = v.sub(&q).unwrap().norm_sq();
        assert_eq!(err, 1.25);
        assert!(err <= (1.0 - 2.0 / 4.0) * v.norm_sq());
        assert_eq!(v.norm_sq(), 14.25);
    }

    #[test]
    fn top_k_ties_go_to_lower_index() {
        assert_eq!(top_k_indices(&[1.0, -1.0, 1.0, 1.0], 2), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.5, -1.0, 1.0, 1.0], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[2.0, 2.0], 2), vec![0, 1]);
    }

    #[test]
    fn zero_vector_compresses_to_zero() {
        let v = ParamVector::zeros(3);
        for spec in [
            CompressorSpec::Identity,
            CompressorSpec::TopK { k: 2 },
            CompressorSpec::StochasticBits { bits: 4, norm: ScaleNorm::Max },
            CompressorSpec::StochasticBits { bits: 8, norm: ScaleNorm::Euclidean },
        ] {
            let msg = compress(&v, &spec, &mut rng()).unwrap();
            assert_eq!(decompress(&msg).as_slice(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn two_bit_max_norm_two_point_distribution() {
        let v = ParamVector::new(vec![1.0, 0.5]);
        let spec = CompressorSpec::StochasticBits { bits: 2, norm: ScaleNorm::Max };
        let mut r = rng();
        let mut ups = 0usize;
        let n = 20_000;
        for _ in 0..n {
            let q = decompress(&compress(&v, &spec, &mut r).unwrap());
            assert_eq!(q[0], 1.0);
            assert!(q[1] == 0.0 || q[1] == 1.0);
            ups += (q[1] == 1.0) as usize;
        }
        // p = 0.5, sd of the count = sqrt(n)/2
        let dev = (ups as f64 - n as f64 / 2.0).abs();
        assert!(dev < 5.0 * (n as f64).sqrt() / 2.0, "ups = {ups}");
    }

    #[test]
    fn negative_zero_level_is_canonical() {
        let v = ParamVector::new(vec![-1e-9, 1.0]);
        let spec = CompressorSpec::StochasticBits { bits: 2, norm: ScaleNorm::Max };
        let mut r = rng();
        for _ in 0..50 {
            let msg = compress(&v, &spec, &mut r).unwrap();
            if let Payload::StochasticBits { levels, .. } = &msg.payload {
                assert!(levels[0] == 0 || levels[0] == -1);
            }
            let q = decompress(&msg);
            assert!(q[0] == 0.0 && q[0].is_sign_positive() || q[0] == -1.0);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let v = ParamVector::new(vec![1.0, f64::NAN]);
        assert!(matches!(
            compress(&v, &CompressorSpec::Identity, &mut rng()),
            Err(Error::NonFinite(_))
        ));
        let v = ParamVector::new(vec![1.0, 2.0]);
        for spec in [
            CompressorSpec::TopK { k: 0 },
            CompressorSpec::TopK { k: 3 },
            CompressorSpec::StochasticBits { bits: 1, norm: ScaleNorm::Max },
            CompressorSpec::StochasticBits { bits: 33, norm: ScaleNorm::Max },
        ] {
            assert!(matches!(
                compress(&v, &spec, &mut rng()),
                Err(Error::InvalidCompressor(_))
            ));
        }
        assert!(compress(&ParamVector::zeros(0), &CompressorSpec::Identity, &mut rng()).is_err());
    }

    #[test]
    fn one_uniform_per_element() {
        use rand::RngCore;
        let v = ParamVector::new(vec![0.25, 1.0, 0.0, -0.5, 0.75]);
        for bits in [2, 5, 8, 32] {
            let spec = CompressorSpec::StochasticBits { bits, norm: ScaleNorm::Max };
            let mut a = rng();
            let mut b = rng();
            compress(&v, &spec, &mut a).unwrap();
            for _ in 0..v.dim() {
                let _: f64 = b.gen();
            }
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn thirty_two_bit_levels_fit() {
        let v = ParamVector::new(vec![-1.0, 0.3, 1.0]);
        let spec = CompressorSpec::StochasticBits { bits: 32, norm: ScaleNorm::Max };
        let msg = compress(&v, &spec, &mut rng()).unwrap();
        let q = decompress(&msg);
        assert_eq!(q[0], -1.0);
        assert_eq!(q[2], 1.0);
        assert!((q[1] - 0.3).abs() < 1e-9);
        assert_eq!(QuantizedMessage::decode(&msg.encode()).unwrap(), msg);
    }
}
