use crate::error::{Error, Result};

use super::format::QFormat;

/// Affine map between reals and raw integers: `x = (raw - zero_point) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantParams {
    scale: f64,
    zero_point: i64,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParams(format!("scale must be positive and finite, got {scale}")));
        }
        Ok(Self { scale, zero_point })
    }

    /// Scale `2^-frac_bits`, zero point 0: raw arithmetic and real arithmetic coincide.
    pub fn for_format(fmt: QFormat) -> Self {
        Self {
            scale: fmt.lsb(),
            zero_point: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn zero_point(&self) -> i64 {
        self.zero_point
    }
}

/// `round_ties_even(x / scale + zero_point)`, saturated into `fmt`.
pub fn quantize(x: f64, fmt: QFormat, params: QuantParams) -> i64 {
    if x.is_nan() {
        return fmt.saturate(params.zero_point);
    }
    let v = (x / params.scale + params.zero_point as f64).round_ties_even();
    if v >= fmt.max_raw() as f64 {
        fmt.max_raw()
    } else if v <= fmt.min_raw() as f64 {
        fmt.min_raw()
    } else {
        v as i64
    }
}

/// Like [`quantize`] but also reports whether the value had to be clamped.
pub fn quantize_checked(x: f64, fmt: QFormat, params: QuantParams) -> (i64, bool) {
    let raw = quantize(x, fmt, params);
    let unclamped = (x / params.scale + params.zero_point as f64).round_ties_even();
    (raw, unclamped != raw as f64)
}

pub fn dequantize(raw: i64, params: QuantParams) -> f64 {
    (raw - params.zero_point) as f64 * params.scale
}

/// Value-preserving change of format: shift by the fractional-bit difference
/// (ties-to-even on right shifts), then saturate. Negative values clamp to 0
/// in unsigned targets.
pub fn requantize(raw: i64, from: QFormat, to: QFormat) -> i64 {
    let shift = to.frac_bits() as i32 - from.frac_bits() as i32;
    to.saturate_wide(shift_round(raw as i128, shift))
}

/// Multiply by `2^shift`; right shifts round to nearest, ties to even.
pub(crate) fn shift_round(v: i128, shift: i32) -> i128 {
    if shift >= 0 {
        // i128 has head-room for any 32-bit raw shifted by up to 64.
        v << shift.min(64)
    } else {
        rshift_rne(v, (-shift) as u32)
    }
}

/// Arithmetic right shift with round-to-nearest, ties-to-even.
pub(crate) fn rshift_rne(v: i128, n: u32) -> i128 {
    if n == 0 {
        return v;
    }
    if n >= 126 {
        return 0;
    }
    let floor = v >> n;
    let rem = v - (floor << n);
    let half = 1i128 << (n - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// `num / den` rounded to nearest, ties to even. `den` must be positive.
pub(crate) fn div_rne(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    let twice = 2 * r;
    if twice > den || (twice == den && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}
