//! Base-2 exponential on non-positive fixed-point operands.
//!
//! `2^x` is split into `2^k * 2^f` with integer `k <= 0` and `f` in `[0, 1)`.
//! The fractional factor comes from a 64-entry U1.15 table (nearest entry,
//! no interpolation) and the integer factor is a right shift.

use super::format::QFormat;
use super::quant::{rshift_rne, shift_round};

/// Fractional bits of the table index; the table has `2^TABLE_BITS` entries.
pub const TABLE_BITS: u32 = 6;

/// Fractional bits of the table entries (U1.15).
pub const TABLE_FRAC: u32 = 15;

/// `round(2^(i/64) * 2^15)` for `i` in `0..64`.
pub const POW2_TABLE: [u32; 64] = [
    32768, 33125, 33486, 33850, 34219, 34591, 34968, 35349, 35734, 36123, 36516, 36914, 37316,
    37722, 38133, 38548, 38968, 39392, 39821, 40255, 40693, 41136, 41584, 42037, 42495, 42958,
    43425, 43898, 44376, 44859, 45348, 45842, 46341, 46846, 47356, 47871, 48393, 48920, 49452,
    49991, 50535, 51085, 51642, 52204, 52773, 53347, 53928, 54515, 55109, 55709, 56316, 56929,
    57549, 58176, 58809, 59449, 60097, 60751, 61413, 62081, 62757, 63441, 64132, 64830,
];

/// `log2(e)` in Q1.15, used to turn a natural-base exponent into a base-2 one.
pub const LOG2E_Q15: i64 = 47274;

/// `2^(x * 2^-frac_bits)` as a raw value with `out_frac` fractional bits,
/// saturated to `out_max`. Positive operands saturate.
pub(crate) fn pow2_raw(x: i64, frac_bits: u32, out_frac: u32, out_max: i64) -> i64 {
    if x > 0 {
        return out_max;
    }
    let x = x as i128;
    let mut k = x >> frac_bits;
    let f = x - (k << frac_bits);
    let mut idx = if frac_bits >= TABLE_BITS {
        rshift_rne(f, frac_bits - TABLE_BITS)
    } else {
        f << (TABLE_BITS - frac_bits)
    };
    if idx == 1 << TABLE_BITS {
        idx = 0;
        k += 1;
    }
    let shift = out_frac as i128 - TABLE_FRAC as i128 + k;
    if shift < -(TABLE_FRAC as i128 + 2) {
        return 0;
    }
    let mant = POW2_TABLE[idx as usize] as i128;
    let v = shift_round(mant, shift as i32);
    v.min(out_max as i128) as i64
}

/// Fixed-point `2^x` for `x <= 0` in `in_fmt`, producing a raw value in the
/// unsigned `out_fmt`. Operands above zero saturate to the output maximum.
pub fn pow2_fixed(x: i64, in_fmt: QFormat, out_fmt: QFormat) -> i64 {
    pow2_raw(x, in_fmt.frac_bits(), out_fmt.frac_bits(), out_fmt.max_raw())
}
