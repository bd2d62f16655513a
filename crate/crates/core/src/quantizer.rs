//! Stochastic quantization of model differences.
//!
//! A worker never sends its model directly. It sends the difference between
//! its current model and the model its neighbours last reconstructed, mapped
//! onto a uniform grid of `2^b` levels spanning `[-R, R]` around the previous
//! reconstruction, with randomized rounding so that the reconstruction is
//! unbiased.

use rand::Rng;
use thiserror::Error;

use crate::ModelVector;

/// Largest bit-width the codec accepts. Levels stay exactly representable in
/// an `f64` mantissa up to this width.
pub const MAX_BITS: u32 = 52;

/// Bits used to carry the range on the wire (binary32).
pub const RANGE_BITS: u64 = 32;

/// Bits used to carry the bit-width in full accounting.
pub const WIDTH_BITS: u64 = 8;

/// Bits per coordinate of an unquantized model.
pub const FULL_PRECISION_BITS: u64 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("bit-width {0} outside 1..={MAX_BITS}")]
    InvalidBits(u32),
    #[error("range must be finite and non-negative, got {0}")]
    InvalidRange(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
    #[error("level {level} at coordinate {index} exceeds {max}")]
    CorruptLevel { index: usize, level: u64, max: u64 },
    #[error("previous range must be positive for adaptive bit selection, got {0}")]
    NonPositivePreviousRange(f64),
    #[error("malformed message bytes: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerParams {
    pub bits: u32,
    pub range: f64,
}

impl QuantizerParams {
    pub fn step_size(&self) -> Result<f64, QuantError> {
        step_size(self.bits, self.range)
    }
}

/// Number of the highest level, `2^b - 1`.
#[inline]
pub fn max_level(bits: u32) -> u64 {
    (1u64 << bits) - 1
}

/// Quantization step `2R / (2^b - 1)`.
pub fn step_size(bits: u32, range: f64) -> Result<f64, QuantError> {
    if bits == 0 || bits > MAX_BITS {
        return Err(QuantError::InvalidBits(bits));
    }
    if !range.is_finite() || range < 0.0 {
        return Err(QuantError::InvalidRange(range));
    }
    Ok(2.0 * range / max_level(bits) as f64)
}

/// One worker-to-neighbour transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMessage {
    pub bits: u32,
    /// Range as carried on the wire. Always a binary32 value.
    pub range: f32,
    pub levels: Vec<u64>,
    pub zero_diff: bool,
}

impl QuantizedMessage {
    pub fn zero(bits: u32) -> Self {
        Self {
            bits,
            range: 0.0,
            levels: Vec::new(),
            zero_diff: true,
        }
    }

    pub fn step_size(&self) -> f64 {
        if self.zero_diff {
            return 0.0;
        }
        2.0 * f64::from(self.range) / max_level(self.bits) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantDiagnostics {
    /// `current - new_hat`.
    pub error: ModelVector,
    pub step_size: f64,
    /// Probability of rounding each coordinate up.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub message: QuantizedMessage,
    pub new_hat: ModelVector,
    pub diagnostics: QuantDiagnostics,
}

/// Range that [`encode`] will put on the wire for this difference: the
/// infinity norm rounded up to the next binary32 value.
pub fn wire_range(current: &ModelVector, prev_hat: &ModelVector) -> f64 {
    f64::from(f32_at_least((current - prev_hat).amax()))
}

/// Smallest binary32 value that is `>= x`.
fn f32_at_least(x: f64) -> f32 {
    let mut r = x as f32;
    if f64::from(r) < x {
        r = f32::from_bits(r.to_bits() + 1);
    }
    r
}

fn check_finite(v: &ModelVector) -> Result<(), QuantError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(QuantError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Encodes `current` against the previous reconstruction `prev_hat`.
///
/// The range is the infinity norm of the difference, rounded up to the next
/// binary32 value so that the wire message and the in-memory message decode
/// identically. Shifted coordinates that land on a grid point round
/// deterministically.
pub fn encode<R: Rng + ?Sized>(
    current: &ModelVector,
    prev_hat: &ModelVector,
    bits: u32,
    rng: &mut R,
) -> Result<Encoded, QuantError> {
    if bits == 0 || bits > MAX_BITS {
        return Err(QuantError::InvalidBits(bits));
    }
    if current.len() != prev_hat.len() {
        return Err(QuantError::DimensionMismatch {
            expected: prev_hat.len(),
            actual: current.len(),
        });
    }
    check_finite(current)?;
    check_finite(prev_hat)?;

    let d = current.len();
    let diff = current - prev_hat;
    let norm = diff.amax();
    if norm == 0.0 {
        return Ok(Encoded {
            message: QuantizedMessage::zero(bits),
            new_hat: prev_hat.clone(),
            diagnostics: QuantDiagnostics {
                error: ModelVector::zeros(d),
                step_size: 0.0,
                probabilities: vec![0.0; d],
            },
        });
    }

    let range = f32_at_least(norm);
    let r = f64::from(range);
    let top = max_level(bits);
    let delta = step_size(bits, r)?;
    let mut levels = Vec::with_capacity(d);
    let mut probabilities = Vec::with_capacity(d);
    for &x in diff.iter() {
        let c = ((x + r) / delta).clamp(0.0, top as f64);
        let nearest = c.round();
        // Grid points computed through a division can miss by an ulp.
        let c = if (c - nearest).abs() <= 8.0 * f64::EPSILON * c.max(1.0) {
            nearest
        } else {
            c
        };
        let floor = c.floor();
        let p = c - floor;
        let mut level = floor as u64;
        if p > 0.0 && rng.gen::<f64>() < p {
            level += 1;
        }
        levels.push(level.min(top));
        probabilities.push(p);
    }

    let message = QuantizedMessage {
        bits,
        range,
        levels,
        zero_diff: false,
    };
    let new_hat = decode(&message, prev_hat)?;
    let error = current - &new_hat;
    Ok(Encoded {
        message,
        new_hat,
        diagnostics: QuantDiagnostics {
            error,
            step_size: delta,
            probabilities,
        },
    })
}

/// Reconstructs `prev_hat + Δ·q − R·1`.
pub fn decode(msg: &QuantizedMessage, prev_hat: &ModelVector) -> Result<ModelVector, QuantError> {
    if msg.zero_diff {
        return Ok(prev_hat.clone());
    }
    if msg.bits == 0 || msg.bits > MAX_BITS {
        return Err(QuantError::InvalidBits(msg.bits));
    }
    if msg.levels.len() != prev_hat.len() {
        return Err(QuantError::DimensionMismatch {
            expected: prev_hat.len(),
            actual: msg.levels.len(),
        });
    }
    let top = max_level(msg.bits);
    if let Some((index, &level)) = msg.levels.iter().enumerate().find(|(_, &l)| l > top) {
        return Err(QuantError::CorruptLevel {
            index,
            level,
            max: top,
        });
    }
    let r = f64::from(msg.range);
    let delta = msg.step_size();
    Ok(ModelVector::from_iterator(
        prev_hat.len(),
        prev_hat
            .iter()
            .zip(&msg.levels)
            .map(|(&h, &q)| h + delta * q as f64 - r),
    ))
}

/// Bit-width rule that keeps the step size non-increasing:
/// `max(1, ceil(log2(1 + (2^b_prev - 1) R_cur / R_prev)))`.
///
/// The search checks the step-size inequality directly, so the returned width
/// satisfies `step_size(b, R_cur) <= step_size(b_prev, R_prev)` in floating
/// point, not just in exact arithmetic. Saturates at [`MAX_BITS`].
pub fn select_bits(b_prev: u32, r_prev: f64, r_cur: f64) -> Result<u32, QuantError> {
    if b_prev == 0 || b_prev > MAX_BITS {
        return Err(QuantError::InvalidBits(b_prev));
    }
    if !(r_prev > 0.0) || !r_prev.is_finite() {
        return Err(QuantError::NonPositivePreviousRange(r_prev));
    }
    if !r_cur.is_finite() || r_cur < 0.0 {
        return Err(QuantError::InvalidRange(r_cur));
    }
    let bound = step_size(b_prev, r_prev)?;
    for b in 1..=MAX_BITS {
        if step_size(b, r_cur)? <= bound {
            return Ok(b);
        }
    }
    Ok(MAX_BITS)
}

/// How the per-message overhead is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    /// `b·d + 32`: bit-width is agreed in advance, only the range travels.
    #[default]
    Experiment,
    /// `b·d + 32 + 8`; a zero-difference message costs one flag bit plus the range.
    Full,
}

pub fn payload_bits(msg: &QuantizedMessage, dim: usize, mode: Accounting) -> u64 {
    let body = if msg.zero_diff {
        0
    } else {
        u64::from(msg.bits) * dim as u64
    };
    match (mode, msg.zero_diff) {
        (Accounting::Experiment, _) => body + RANGE_BITS,
        (Accounting::Full, true) => 1 + RANGE_BITS,
        (Accounting::Full, false) => body + RANGE_BITS + WIDTH_BITS,
    }
}

/// Payload of an unquantized model, `32·d`.
pub fn full_precision_bits(dim: usize) -> u64 {
    FULL_PRECISION_BITS * dim as u64
}

/// Serializes as `[u8 bits][u8 flags][f32 range LE][levels packed LSB-first]`.
pub fn to_bytes(msg: &QuantizedMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + (msg.levels.len() * msg.bits as usize).div_ceil(8));
    out.push(msg.bits as u8);
    out.push(u8::from(msg.zero_diff));
    out.extend_from_slice(&msg.range.to_le_bytes());
    if msg.zero_diff {
        return out;
    }
    let mut acc: u128 = 0;
    let mut filled = 0u32;
    for &level in &msg.levels {
        acc |= u128::from(level) << filled;
        filled += msg.bits;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    out
}

/// Parses a serialized message carrying `dim` levels.
pub fn from_bytes(bytes: &[u8], dim: usize) -> Result<QuantizedMessage, QuantError> {
    if bytes.len() < 6 {
        return Err(QuantError::Malformed("header shorter than 6 bytes"));
    }
    let bits = u32::from(bytes[0]);
    if bits == 0 || bits > MAX_BITS {
        return Err(QuantError::InvalidBits(bits));
    }
    let zero_diff = bytes[1] & 1 == 1;
    let range = f32::from_le_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
    if zero_diff {
        return Ok(QuantizedMessage {
            bits,
            range,
            levels: Vec::new(),
            zero_diff,
        });
    }
    let body = &bytes[6..];
    if body.len() != (dim * bits as usize).div_ceil(8) {
        return Err(QuantError::Malformed("level payload length"));
    }
    let mask = max_level(bits);
    let mut levels = Vec::with_capacity(dim);
    let mut acc: u128 = 0;
    let mut filled = 0u32;
    let mut bytes_iter = body.iter();
    for _ in 0..dim {
        while filled < bits {
            let byte = bytes_iter.next().ok_or(QuantError::Malformed("truncated levels"))?;
            acc |= u128::from(*byte) << filled;
            filled += 8;
        }
        levels.push((acc as u64) & mask);
        acc >>= bits;
        filled -= bits;
    }
    Ok(QuantizedMessage {
        bits,
        range,
        levels,
        zero_diff,
    })
}
