//! Quantization arithmetic shared by every integer kernel.
//!
//! Real values relate to int8 quanta through the affine map
//! `real = scale * (q - zero_point)`. Integer kernels accumulate in `i32`
//! and rescale into the next tensor's domain with a [`FixedMul`], a
//! normalized 31-bit multiplier plus a right shift.
//!
//! Every rounding step in this crate is round-half-away-from-zero.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("quantization scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("zero point {0} outside int8 range")]
    BadZeroPoint(i32),
    #[error("requantization ratio {0} outside (0, 1]")]
    UnsupportedRatio(f64),
}

/// Affine quantization parameters of one tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self, QuantError> {
        let qp = QuantParams { scale, zero_point };
        qp.check()?;
        Ok(qp)
    }

    pub fn check(&self) -> Result<(), QuantError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(QuantError::BadScale(f64::from(self.scale)));
        }
        if !(-128..=127).contains(&self.zero_point) {
            return Err(QuantError::BadZeroPoint(self.zero_point));
        }
        Ok(())
    }

    /// Parameters of the network input: pixel intensity in [0, 1].
    pub fn image_input() -> Self {
        QuantParams {
            scale: 1.0 / 255.0,
            zero_point: -128,
        }
    }
}

/// Fixed-point encoding of a real ratio `M` in (0, 1]:
/// `M = multiplier / 2^31 / 2^right_shift`.
///
/// `multiplier` lies in `[2^30, 2^31]`; the upper end only occurs with
/// `right_shift == 0` and encodes exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedMul {
    pub multiplier: u32,
    pub right_shift: u32,
}

const Q31: u32 = 1 << 31;

impl FixedMul {
    /// The identity ratio.
    pub const ONE: FixedMul = FixedMul {
        multiplier: Q31,
        right_shift: 0,
    };

    pub fn is_valid(&self) -> bool {
        let m = self.multiplier;
        (1 << 30..Q31).contains(&m) || (m == Q31 && self.right_shift == 0)
    }

    /// The real value this encoding stands for.
    pub fn value(&self) -> f64 {
        f64::from(self.multiplier) / f64::from(Q31) / 2f64.powi(self.right_shift as i32)
    }

    /// Encodes a ratio in (0, 1] directly.
    pub fn from_ratio(m: f64) -> Result<Self, QuantError> {
        if !(m > 0.0 && m <= 1.0) {
            return Err(QuantError::UnsupportedRatio(m));
        }
        // m = frac * 2^-shift with frac in [0.5, 1)
        let mut shift = 0u32;
        let mut frac = m;
        while frac < 0.5 {
            frac *= 2.0;
            shift += 1;
        }
        if frac >= 1.0 {
            return Ok(FixedMul::ONE);
        }
        // Scaling by powers of two is exact, so `frac * 2^31` is the exact
        // product and rounding happens once.
        let q = (frac * f64::from(Q31)).round() as u64;
        let (multiplier, right_shift) = if q == u64::from(Q31) {
            if shift == 0 {
                (Q31, 0)
            } else {
                (1 << 30, shift - 1)
            }
        } else {
            (q as u32, shift)
        };
        Ok(FixedMul {
            multiplier,
            right_shift,
        })
    }
}

/// Rescale ratio from an accumulator (input scale times weight scale) into
/// the output scale.
pub fn derive_requant(in_scale: f64, w_scale: f64, out_scale: f64) -> Result<FixedMul, QuantError> {
    for s in [in_scale, w_scale, out_scale] {
        if !(s.is_finite() && s > 0.0) {
            return Err(QuantError::BadScale(s));
        }
    }
    FixedMul::from_ratio(in_scale * w_scale / out_scale)
}

#[inline]
fn saturate_i8(v: i64) -> i8 {
    v.clamp(-128, 127) as i8
}

pub fn quantize(x: f32, qp: QuantParams) -> i8 {
    if x.is_nan() {
        return saturate_i8(i64::from(qp.zero_point));
    }
    let scaled = (f64::from(x) / f64::from(qp.scale)).round();
    // Clamp in the real domain first so huge inputs cannot wrap.
    let scaled = scaled.clamp(-1024.0, 1024.0) as i64;
    saturate_i8(scaled + i64::from(qp.zero_point))
}

pub fn dequantize(q: i8, qp: QuantParams) -> f32 {
    ((i32::from(q) - qp.zero_point) as f64 * f64::from(qp.scale)) as f32
}

/// `acc * M` rounded half away from zero, without the zero point or clamp.
#[inline]
pub fn scale_accumulator(acc: i32, fm: FixedMul) -> i64 {
    let total_shift = 31 + fm.right_shift;
    let product = i64::from(acc) * i64::from(fm.multiplier);
    if total_shift >= 64 {
        return 0;
    }
    let magnitude = product.unsigned_abs();
    let rounded = ((magnitude + (1u64 << (total_shift - 1))) >> total_shift) as i64;
    if product < 0 {
        -rounded
    } else {
        rounded
    }
}

/// Rescales an int32 accumulator into the int8 output domain.
#[inline]
pub fn requantize(acc: i32, fm: FixedMul, out_zp: i32) -> i8 {
    saturate_i8(scale_accumulator(acc, fm) + i64::from(out_zp))
}
