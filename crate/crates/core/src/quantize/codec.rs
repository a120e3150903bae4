//! Binary wire format.
//!
//! ```text
//! header   d: u32 LE | scale: f64 LE | tag: u8 | params
//!          params: identity = (none), top-k = k: u32 LE, bits = m: u8, norm: u8
//! payload  identity  d × f64 LE
//!          top-k     k × (index: u32 LE, value: f64 LE), indices strictly increasing
//!          bits      d × m-bit codes, LSB-first within bytes, zero padded;
//!                    code = level | sign << (m − 1); level 0 has sign 0
//! ```

use thiserror::Error;

use super::{level_count, CompressorSpec, Payload, QuantizedMessage, ScaleNorm, MAX_BITS, MIN_BITS};

const TAG_IDENTITY: u8 = 0;
const TAG_TOP_K: u8 = 1;
const TAG_BITS: u8 = 2;

const BASE_HEADER: usize = 4 + 8 + 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown compressor tag {0}")]
    UnknownTag(u8),
    #[error("length mismatch: header implies {expected} bytes, got {got}")]
    LengthMismatch { expected: u64, got: usize },
    #[error("invalid header field: {0}")]
    InvalidHeader(String),
    #[error("non-finite value in payload")]
    NonFinite,
    #[error("top-k indices must be strictly increasing and below d")]
    BadIndex,
    #[error("nonzero padding bits")]
    NonzeroPadding,
    #[error("level 0 encoded with the sign bit set")]
    NegativeZero,
}

pub(super) fn header_len(spec: &CompressorSpec) -> usize {
    BASE_HEADER
        + match spec {
            CompressorSpec::Identity => 0,
            CompressorSpec::TopK { .. } => 4,
            CompressorSpec::StochasticBits { .. } => 2,
        }
}

fn norm_byte(norm: ScaleNorm) -> u8 {
    match norm {
        ScaleNorm::Euclidean => 0,
        ScaleNorm::Max => 1,
    }
}

pub(super) fn encode(msg: &QuantizedMessage) -> Vec<u8> {
    let spec = msg.spec();
    let payload_bytes = msg.payload_bits().div_ceil(8) as usize;
    let mut out = Vec::with_capacity(header_len(&spec) + payload_bytes);
    out.extend_from_slice(&(msg.dim as u32).to_le_bytes());
    out.extend_from_slice(&msg.scale.to_le_bytes());
    match &msg.payload {
        Payload::Identity { values } => {
            out.push(TAG_IDENTITY);
            for x in values {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::TopK { indices, values } => {
            out.push(TAG_TOP_K);
            out.extend_from_slice(&(indices.len() as u32).to_le_bytes());
            for (i, x) in indices.iter().zip(values) {
                out.extend_from_slice(&i.to_le_bytes());
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Payload::StochasticBits { bits, norm, levels } => {
            out.push(TAG_BITS);
            out.push(*bits as u8);
            out.push(norm_byte(*norm));
            let mut writer = BitWriter::new(&mut out);
            for &level in levels {
                let sign = (level < 0) as u64;
                let code = level.unsigned_abs() as u64 | sign << (bits - 1);
                writer.write(code, *bits);
            }
            writer.finish();
        }
    }
    out
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N], CodecError> {
    bytes
        .get(at..at + N)
        .map(|s| s.try_into().expect("slice length"))
        .ok_or(CodecError::Truncated { needed: at + N, got: bytes.len() })
}

pub(super) fn decode(bytes: &[u8]) -> Result<QuantizedMessage, CodecError> {
    let dim = u32::from_le_bytes(take(bytes, 0)?) as usize;
    let scale = f64::from_le_bytes(take(bytes, 4)?);
    let [tag] = take::<1>(bytes, 12)?;
    if dim == 0 {
        return Err(CodecError::InvalidHeader("d = 0".into()));
    }
    if !scale.is_finite() || scale < 0.0 {
        return Err(CodecError::InvalidHeader(format!("scale {scale}")));
    }
    let check_len = |header: usize, payload_bits: u64| -> Result<usize, CodecError> {
        let expected = header as u64 + payload_bits.div_ceil(8);
        if expected != bytes.len() as u64 {
            return Err(CodecError::LengthMismatch { expected, got: bytes.len() });
        }
        Ok(header)
    };
    let read_f64 = |at: usize| -> Result<f64, CodecError> {
        let x = f64::from_le_bytes(take(bytes, at)?);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(CodecError::NonFinite)
        }
    };

    let payload = match tag {
        TAG_IDENTITY => {
            let start = check_len(BASE_HEADER, 64 * dim as u64)?;
            let values = (0..dim)
                .map(|i| read_f64(start + 8 * i))
                .collect::<Result<Vec<_>, _>>()?;
            Payload::Identity { values }
        }
        TAG_TOP_K => {
            let k = u32::from_le_bytes(take(bytes, BASE_HEADER)?) as usize;
            if k == 0 || k > dim {
                return Err(CodecError::InvalidHeader(format!("k = {k}, d = {dim}")));
            }
            let start = check_len(BASE_HEADER + 4, 96 * k as u64)?;
            let mut indices = Vec::with_capacity(k);
            let mut values = Vec::with_capacity(k);
            for j in 0..k {
                let at = start + 12 * j;
                let index = u32::from_le_bytes(take(bytes, at)?);
                if index as usize >= dim || indices.last().is_some_and(|&p| index <= p) {
                    return Err(CodecError::BadIndex);
                }
                indices.push(index);
                values.push(read_f64(at + 4)?);
            }
            Payload::TopK { indices, values }
        }
        TAG_BITS => {
            let [bits, norm] = take::<2>(bytes, BASE_HEADER)?;
            let bits = bits as u32;
            if !(MIN_BITS..=MAX_BITS).contains(&bits) {
                return Err(CodecError::InvalidHeader(format!("bits = {bits}")));
            }
            let norm = match norm {
                0 => ScaleNorm::Euclidean,
                1 => ScaleNorm::Max,
                other => return Err(CodecError::InvalidHeader(format!("norm = {other}"))),
            };
            let start = check_len(BASE_HEADER + 2, bits as u64 * dim as u64)?;
            let mut reader = BitReader::new(&bytes[start..]);
            let sign_bit = 1u64 << (bits - 1);
            let max_level = level_count(bits);
            let mut levels = Vec::with_capacity(dim);
            for _ in 0..dim {
                let code = reader.read(bits);
                let magnitude = code & (sign_bit - 1);
                debug_assert!(magnitude <= max_level);
                if code == sign_bit {
                    return Err(CodecError::NegativeZero);
                }
                let magnitude = magnitude as i32;
                levels.push(if code & sign_bit != 0 { -magnitude } else { magnitude });
            }
            if !reader.rest_is_zero() {
                return Err(CodecError::NonzeroPadding);
            }
            Payload::StochasticBits { bits, norm, levels }
        }
        other => return Err(CodecError::UnknownTag(other)),
    };
    Ok(QuantizedMessage { dim, scale, payload })
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u128,
    filled: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        Self { out, acc: 0, filled: 0 }
    }

    fn write(&mut self, value: u64, bits: u32) {
        self.acc |= (value as u128) << self.filled;
        self.filled += bits;
        while self.filled >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    fn finish(self) {
        if self.filled > 0 {
            self.out.push(self.acc as u8);
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u128,
    filled: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0, acc: 0, filled: 0 }
    }

    // Length was validated up front, so reads never run past the slice.
    fn read(&mut self, bits: u32) -> u64 {
        while self.filled < bits {
            self.acc |= (self.bytes[self.pos] as u128) << self.filled;
            self.pos += 1;
            self.filled += 8;
        }
        let value = (self.acc & ((1u128 << bits) - 1)) as u64;
        self.acc >>= bits;
        self.filled -= bits;
        value
    }

    fn rest_is_zero(&self) -> bool {
        self.acc == 0 && self.bytes[self.pos..].iter().all(|&b| b == 0)
    }
}
