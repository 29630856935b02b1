//! Bit-exact binary32 decomposition and the shared-exponent fixed-point
//! representation used on the uplink.
//!
//! A clipped model element `w` with `|w| <= 2^(e-126)`, where `e` is the
//! exponent field of `nu_inf`, is shifted by `3 * 2^(e-126)`. Every shifted
//! value then lies in `[2^(e-125), 2^(e-124))`, so all elements share sign
//! bit `0` and exponent field `e + 2`, and only their 23 fraction bits are
//! transmitted. Any received fraction pattern decodes to a value inside the
//! clip range, which is what makes the representation tolerant to bit errors.
//!
//! Bit numbering inside a [`BitStream`]: bit `k` is fraction bit `j = k % 23`
//! of parameter `m = k / 23`, with `j = 0` the least significant fraction bit
//! (weight `2^(j-23)` relative to the implicit leading one).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Fraction bits per binary32 value.
pub const FRACTION_BITS: usize = 23;
/// Mask selecting the fraction field.
pub const FRACTION_MASK: u32 = (1 << FRACTION_BITS) - 1;
const HALF_FRACTION: i64 = 1 << 22;

pub(crate) fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

/// Sign / exponent / fraction fields of a binary32 value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Binary32Parts {
    pub sign: bool,
    /// Biased exponent field (bias 127).
    pub exponent: u8,
    /// 23-bit fraction field, LSB weight `2^-23`.
    pub fraction: u32,
}

impl Binary32Parts {
    pub fn from_bits(bits: u32) -> Self {
        Self {
            sign: bits >> 31 == 1,
            exponent: ((bits >> 23) & 0xff) as u8,
            fraction: bits & FRACTION_MASK,
        }
    }

    pub fn to_bits(self) -> u32 {
        ((self.sign as u32) << 31) | ((self.exponent as u32) << 23) | (self.fraction & FRACTION_MASK)
    }

    pub fn recompose(self) -> f32 {
        f32::from_bits(self.to_bits())
    }

    pub fn is_normal(self) -> bool {
        self.exponent != 0 && self.exponent != 0xff
    }

    /// `(-1)^sign * 2^(exponent - 127)`: the signed weight of the implicit
    /// leading one.
    pub fn signed_scale(self) -> f64 {
        let s = pow2(self.exponent as i32 - 127);
        if self.sign {
            -s
        } else {
            s
        }
    }
}

/// Splits a normalized binary32 value into its fields.
///
/// Zero, subnormal, infinite and NaN inputs are rejected: they only reach
/// this point when upstream clipping failed.
pub fn decompose(x: f32) -> Result<Binary32Parts> {
    let parts = Binary32Parts::from_bits(x.to_bits());
    if parts.is_normal() {
        Ok(parts)
    } else {
        Err(Error::NotNormalized {
            value: x,
            exponent: parts.exponent,
        })
    }
}

/// A vector of binary32 model parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f32>);

impl ModelVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element. NaN elements propagate.
    pub fn linf_norm(&self) -> f32 {
        self.0.iter().fold(0.0f32, |acc, v| {
            if v.is_nan() || acc.is_nan() {
                f32::NAN
            } else {
                acc.max(v.abs())
            }
        })
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Squared Euclidean distance, accumulated in f64.
    pub fn sq_distance(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }

    /// Clamps every element into `[-limit, limit]`.
    pub fn clip_linf(&self, limit: f32) -> Self {
        Self(self.0.iter().map(|v| v.clamp(-limit, limit)).collect())
    }

    /// Rescales the vector onto the ball `||.||_2 <= limit` if it lies outside.
    pub fn clip_l2(&self, limit: f64) -> Self {
        let norm = self.l2_norm();
        if norm <= limit || norm == 0.0 {
            return self.clone();
        }
        let scale = limit / norm;
        // Rounding to f32 can push the norm a hair above the limit; shrink
        // the factor by one f32 ulp to stay inside.
        let scale = scale * (1.0 - f32::EPSILON as f64);
        Self(self.0.iter().map(|&v| (v as f64 * scale) as f32).collect())
    }
}

impl From<Vec<f32>> for ModelVector {
    fn from(values: Vec<f32>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for ModelVector {
    type Output = f32;
    fn index(&self, index: usize) -> &f32 {
        &self.0[index]
    }
}

/// The fixed-point grid implied by a public `nu_inf`.
///
/// With `e` the exponent field of `nu_inf`, clipped values live in
/// `[-2^(e-126), 2^(e-126)]`, the shift constant is `3 * 2^(e-126)` and the
/// grid step is `2^(e-148)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointFormat {
    nu_exponent: u8,
}

impl FixedPointFormat {
    pub fn from_nu_inf(nu_inf: f32) -> Result<Self> {
        if !(nu_inf > 0.0) {
            return Err(invalid("nu_inf", nu_inf as f64, "must be positive"));
        }
        let parts = decompose(nu_inf)?;
        Self::from_exponent(parts.exponent)
    }

    pub fn from_exponent(nu_exponent: u8) -> Result<Self> {
        if nu_exponent == 0 || nu_exponent == 0xff {
            return Err(Error::NotNormalized {
                value: f32::NAN,
                exponent: nu_exponent,
            });
        }
        if nu_exponent as u16 + 2 >= 0xff {
            return Err(Error::ExponentOverflow(nu_exponent));
        }
        Ok(Self { nu_exponent })
    }

    /// Rebuilds the format from a transmitted shared exponent (`e + 2`).
    pub fn from_shared_exponent(shared: u8) -> Result<Self> {
        if shared < 3 {
            return Err(Error::Wire(format!("shared exponent {shared} below minimum 3")));
        }
        Self::from_exponent(shared - 2)
    }

    /// Exponent field `e` of `nu_inf`.
    pub fn nu_exponent(self) -> u8 {
        self.nu_exponent
    }

    /// Exponent field common to every shifted element, `e + 2`.
    pub fn shared_exponent(self) -> u8 {
        self.nu_exponent + 2
    }

    /// Clip bound `2^(e-126)`.
    pub fn limit(self) -> f64 {
        pow2(self.nu_exponent as i32 - 126)
    }

    /// Shift constant `3 * 2^(e-126)`.
    pub fn offset(self) -> f64 {
        3.0 * self.limit()
    }

    /// Grid step `2^(e-148)`, the fixed-point ULP.
    pub fn step(self) -> f64 {
        pow2(self.nu_exponent as i32 - 148)
    }

    /// Weight of the implicit leading one of a shifted value, `2^(e-125)`.
    pub fn unit(self) -> f64 {
        pow2(self.nu_exponent as i32 - 125)
    }

    /// Fraction field of `value + offset`, rounded to nearest (ties to even).
    /// Returns `None` for out-of-range or non-finite input. The upper clip
    /// boundary would need one more exponent bit and is clamped to the
    /// all-ones fraction.
    pub fn quantize(self, value: f32) -> Option<u32> {
        self.quantize_f64(value as f64)
    }

    /// [`quantize`](Self::quantize) for a value not yet rounded to binary32.
    pub fn quantize_f64(self, v: f64) -> Option<u32> {
        if !v.is_finite() || v.abs() > self.limit() {
            return None;
        }
        let scaled = (v * pow2(148 - self.nu_exponent as i32)).round_ties_even() as i64;
        Some((scaled + HALF_FRACTION).clamp(0, FRACTION_MASK as i64) as u32)
    }

    /// Inverse of [`quantize`](Self::quantize). Exact: the result is an
    /// integer multiple of the step with at most 23 significant bits.
    pub fn dequantize(self, fraction: u32) -> f32 {
        let centered = (fraction & FRACTION_MASK) as i64 - HALF_FRACTION;
        (centered as f64 * self.step()) as f32
    }

    /// Decimal value of the shifted element with the given fraction field.
    pub fn decimal(self, fraction: u32) -> f64 {
        self.unit() * (1.0 + (fraction & FRACTION_MASK) as f64 * pow2(-23))
    }
}

/// Shifted model in the shared-exponent fixed-point format. The sign is
/// implicitly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointVector {
    pub shared_exponent: u8,
    pub fractions: Vec<u32>,
}

impl FixedPointVector {
    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    pub fn decimal(&self, m: usize) -> f64 {
        pow2(self.shared_exponent as i32 - 127) * (1.0 + self.fractions[m] as f64 * pow2(-23))
    }

    /// Element `m` as a binary32 value.
    pub fn to_binary32(&self, m: usize) -> f32 {
        Binary32Parts {
            sign: false,
            exponent: self.shared_exponent,
            fraction: self.fractions[m],
        }
        .recompose()
    }
}

/// Converts clipped parameters to the shared-exponent fixed-point format.
pub fn fp_to_fx(model: &ModelVector, nu_inf: f32) -> Result<FixedPointVector> {
    let format = FixedPointFormat::from_nu_inf(nu_inf)?;
    let fractions = model
        .as_slice()
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            format.quantize(value).ok_or(Error::OutOfRange {
                index,
                value,
                limit: format.limit(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedPointVector {
        shared_exponent: format.shared_exponent(),
        fractions,
    })
}

/// Fraction bits of a model, 23 per parameter, parameter-major.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    groups: Vec<u32>,
}

impl BitStream {
    pub fn zeros(params: usize) -> Self {
        Self {
            groups: vec![0; params],
        }
    }

    /// Builds a stream from per-parameter fraction fields (upper bits are
    /// masked off).
    pub fn from_groups(mut groups: Vec<u32>) -> Self {
        groups.iter_mut().for_each(|g| *g &= FRACTION_MASK);
        Self { groups }
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        if !bits.len().is_multiple_of(FRACTION_BITS) {
            return Err(Error::BitLength(bits.len()));
        }
        let groups = bits
            .chunks(FRACTION_BITS)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (j, &b)| acc | ((b as u32) << j))
            })
            .collect();
        Ok(Self { groups })
    }

    /// Total number of bits, `23 * M`.
    pub fn len(&self) -> usize {
        self.groups.len() * FRACTION_BITS
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn bit(&self, k: usize) -> bool {
        (self.groups[k / FRACTION_BITS] >> (k % FRACTION_BITS)) & 1 == 1
    }

    pub fn set_bit(&mut self, k: usize, value: bool) {
        let mask = 1u32 << (k % FRACTION_BITS);
        let group = &mut self.groups[k / FRACTION_BITS];
        if value {
            *group |= mask;
        } else {
            *group &= !mask;
        }
    }

    pub fn toggle(&mut self, k: usize) {
        self.groups[k / FRACTION_BITS] ^= 1 << (k % FRACTION_BITS);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |k| self.bit(k))
    }

    pub fn to_bits(&self) -> Vec<bool> {
        self.iter().collect()
    }

    pub fn count_ones(&self) -> u64 {
        self.groups.iter().map(|g| g.count_ones() as u64).sum()
    }
}

/// Serializes the fraction fields into a bitstream.
pub fn encode_fractions(fx: &FixedPointVector) -> BitStream {
    BitStream::from_groups(fx.fractions.clone())
}

/// `encode_fractions(fp_to_fx(model, nu_inf))`.
pub fn encode_model(model: &ModelVector, nu_inf: f32) -> Result<BitStream> {
    fp_to_fx(model, nu_inf).map(|fx| encode_fractions(&fx))
}

/// Server-side recovery: re-attach the shared sign and exponent to each
/// received fraction and subtract the shift constant. Every bit pattern
/// decodes to a value in the clip range.
pub fn recover_model(bits: &BitStream, nu_inf: f32) -> Result<ModelVector> {
    let format = FixedPointFormat::from_nu_inf(nu_inf)?;
    Ok(recover_with_format(bits, format))
}

pub(crate) fn recover_with_format(bits: &BitStream, format: FixedPointFormat) -> ModelVector {
    ModelVector(bits.groups().iter().map(|&f| format.dequantize(f)).collect())
}

/// On-wire frame: `M` (u32 little-endian), the shared exponent (u8), then
/// the `23 * M` stream bits packed LSB-first into bytes with zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub shared_exponent: u8,
    pub bits: BitStream,
}

/// Bytes preceding the packed payload.
pub const WIRE_HEADER_LEN: usize = 5;

impl WireFrame {
    pub fn new(shared_exponent: u8, bits: BitStream) -> Self {
        Self {
            shared_exponent,
            bits,
        }
    }

    pub fn from_fixed_point(fx: &FixedPointVector) -> Self {
        Self::new(fx.shared_exponent, encode_fractions(fx))
    }

    pub fn payload_len(params: usize) -> usize {
        (params * FRACTION_BITS).div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.bits.num_params();
        let mut out = Vec::with_capacity(WIRE_HEADER_LEN + Self::payload_len(params));
        out.extend_from_slice(&(params as u32).to_le_bytes());
        out.push(self.shared_exponent);
        let mut payload = vec![0u8; Self::payload_len(params)];
        for k in (0..self.bits.len()).filter(|&k| self.bits.bit(k)) {
            payload[k / 8] |= 1 << (k % 8);
        }
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < WIRE_HEADER_LEN {
            return Err(Error::Wire(format!("frame of {} bytes has no header", bytes.len())));
        }
        let params = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let shared_exponent = bytes[4];
        let payload = &bytes[WIRE_HEADER_LEN..];
        let expected = Self::payload_len(params);
        if payload.len() != expected {
            return Err(Error::Wire(format!(
                "payload of {} bytes, expected {expected} for M = {params}",
                payload.len()
            )));
        }
        let nbits = params * FRACTION_BITS;
        if !nbits.is_multiple_of(8) && payload[expected - 1] >> (nbits % 8) != 0 {
            return Err(Error::Wire("non-zero padding bits".into()));
        }
        let mut bits = BitStream::zeros(params);
        for k in 0..nbits {
            if (payload[k / 8] >> (k % 8)) & 1 == 1 {
                bits.set_bit(k, true);
            }
        }
        Ok(Self {
            shared_exponent,
            bits,
        })
    }
}
