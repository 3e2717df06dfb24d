//! Quantization parameters, tensor (de)quantization and fixed-point
//! requantization.
//!
//! Every rounding step uses round-half-away-from-zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, QuantParams, QuantTensor};

const QMIN: i32 = -128;
const QMAX: i32 = 127;

/// Round half away from zero (`f64::round` semantics).
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Asymmetric activation parameters covering `[min, max]` extended to
/// include zero.
pub fn qparams_asym(min: f64, max: f64) -> Result<QuantParams> {
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::InvalidQuantParams(format!(
            "range [{min}, {max}] is not finite"
        )));
    }
    if min > max {
        return Err(Error::InvalidQuantParams(format!(
            "range minimum {min} exceeds maximum {max}"
        )));
    }
    let lo = min.min(0.0);
    let hi = max.max(0.0);
    if hi == lo {
        return QuantParams::new(1.0, 0);
    }
    let scale = (hi - lo) / 255.0;
    let zero_point = round_half_away(QMIN as f64 - lo / scale).clamp(QMIN as f64, QMAX as f64);
    QuantParams::new(scale as f32, zero_point as i32)
}

/// Symmetric weight parameters: zero point 0, `absmax` maps to 127.
pub fn qparams_sym(absmax: f32) -> Result<QuantParams> {
    if !absmax.is_finite() || absmax < 0.0 {
        return Err(Error::InvalidQuantParams(format!(
            "absmax must be finite and non-negative, got {absmax}"
        )));
    }
    if absmax == 0.0 {
        return QuantParams::new(1.0, 0);
    }
    QuantParams::new(absmax / 127.0, 0)
}

#[inline]
pub fn quantize_value(x: f32, qp: QuantParams) -> i8 {
    let q = round_half_away(x as f64 / qp.scale as f64) + qp.zero_point as f64;
    q.clamp(QMIN as f64, QMAX as f64) as i8
}

#[inline]
pub fn dequantize_value(q: i8, qp: QuantParams) -> f32 {
    ((q as i32 - qp.zero_point) as f64 * qp.scale as f64) as f32
}

pub fn quantize_tensor(x: &FloatTensor, qp: QuantParams) -> QuantTensor {
    let data = x.data().iter().map(|&v| quantize_value(v, qp)).collect();
    QuantTensor::from_parts(x.shape().clone(), data, qp)
}

pub fn dequantize(q: &QuantTensor) -> FloatTensor {
    let qp = q.qparams();
    let data = q.data().iter().map(|&v| dequantize_value(v, qp)).collect();
    FloatTensor::from_parts(q.shape().clone(), data)
}

/// Real multiplier represented as `m0 * 2^-shift` with `m0` in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointMultiplier {
    pub m0: i32,
    pub shift: u32,
}

impl FixedPointMultiplier {
    pub fn new(m0: i32, shift: u32) -> Result<Self> {
        if m0 < (1 << 30) || shift > 62 {
            return Err(Error::InvalidQuantParams(format!(
                "fixed-point multiplier ({m0}, {shift}) out of range"
            )));
        }
        Ok(FixedPointMultiplier { m0, shift })
    }

    pub fn to_real(self) -> f64 {
        self.m0 as f64 * (-(self.shift as f64)).exp2()
    }
}

pub fn fxp_from_real(multiplier: f64) -> Result<FixedPointMultiplier> {
    let lower = (-31f64).exp2();
    let upper = 31f64.exp2();
    if !(multiplier > lower && multiplier < upper) {
        return Err(Error::MultiplierRange(multiplier));
    }
    let mut shift: i32 = 0;
    let mut scaled = multiplier;
    // scaling by powers of two is exact in binary floating point
    while scaled < (1u64 << 30) as f64 {
        scaled *= 2.0;
        shift += 1;
    }
    while scaled >= (1u64 << 31) as f64 {
        scaled /= 2.0;
        shift -= 1;
    }
    let mut m0 = round_half_away(scaled) as i64;
    if m0 == 1 << 31 {
        m0 = 1 << 30;
        shift -= 1;
    }
    if shift < 0 {
        return Err(Error::MultiplierRange(multiplier));
    }
    FixedPointMultiplier::new(m0 as i32, shift as u32)
}

/// `clamp(round_half_away(acc * m0 * 2^-shift) + z_out, -128, 127)`, exact in
/// 64-bit integer arithmetic.
#[inline]
pub fn requant(acc: i32, f: FixedPointMultiplier, z_out: i32) -> i8 {
    let t = acc as i64 * f.m0 as i64;
    let r = if f.shift == 0 {
        t
    } else {
        let half = 1i64 << (f.shift - 1);
        let magnitude = (t.abs() + half) >> f.shift;
        if t < 0 {
            -magnitude
        } else {
            magnitude
        }
    };
    (r + z_out as i64).clamp(QMIN as i64, QMAX as i64) as i8
}
