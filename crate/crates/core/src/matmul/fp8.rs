//! 8-bit floating point: E4M3 (OFP8 convention, no infinities, one NaN
//! mantissa per sign, max 448) and E5M2 (IEEE-754 style with infinities).
//!
//! The MAC multiplies the hidden-bit mantissas (at most 4 bits) on the INT4
//! unit, adds exponents, and accumulates into fp32. FP8 products are exact in
//! fp32, so the only rounding is the final add.

use super::int4::{mac_int4, Nibble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fp8Format {
    E4M3,
    E5M2,
}

impl Fp8Format {
    pub const fn exp_bits(self) -> u32 {
        match self {
            Fp8Format::E4M3 => 4,
            Fp8Format::E5M2 => 5,
        }
    }

    pub const fn man_bits(self) -> u32 {
        7 - self.exp_bits()
    }

    pub const fn bias(self) -> i32 {
        (1 << (self.exp_bits() - 1)) - 1
    }

    /// Largest finite magnitude: 448 for E4M3, 57344 for E5M2.
    pub fn max_finite(self) -> f64 {
        decode_bits(self.max_code(), self)
    }

    /// Magnitude code of the largest finite value.
    const fn max_code(self) -> u8 {
        match self {
            Fp8Format::E4M3 => 0x7E,
            Fp8Format::E5M2 => 0x7B,
        }
    }

    const fn nan_code(self) -> u8 {
        match self {
            Fp8Format::E4M3 => 0x7F,
            Fp8Format::E5M2 => 0x7E,
        }
    }
}

impl std::fmt::Display for Fp8Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fp8Format::E4M3 => "e4m3",
            Fp8Format::E5M2 => "e5m2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fp8Value {
    pub bits: u8,
    pub format: Fp8Format,
}

impl Fp8Value {
    pub fn new(bits: u8, format: Fp8Format) -> Self {
        Self { bits, format }
    }

    pub fn decode(self) -> f64 {
        fp8_decode(self)
    }

    pub fn is_nan(self) -> bool {
        self.decode().is_nan()
    }

    pub fn is_finite(self) -> bool {
        self.decode().is_finite()
    }

    fn sign(self) -> bool {
        self.bits & 0x80 != 0
    }

    fn exp_field(self) -> u32 {
        ((self.bits & 0x7F) >> self.format.man_bits()) as u32
    }

    fn man_field(self) -> u32 {
        (self.bits & ((1 << self.format.man_bits()) - 1)) as u32
    }

    /// Significand with the hidden bit and its power-of-two weight.
    fn significand(self) -> (u32, i32) {
        let fmt = self.format;
        let e = self.exp_field();
        let m = self.man_field();
        let exp = e.max(1) as i32 - fmt.bias() - fmt.man_bits() as i32;
        if e == 0 {
            (m, exp)
        } else {
            (m | 1 << fmt.man_bits(), exp)
        }
    }
}

/// Exact value of a code; NaN and infinities come back as the f64 specials.
pub fn fp8_decode(v: Fp8Value) -> f64 {
    decode_bits(v.bits, v.format)
}

fn decode_bits(bits: u8, format: Fp8Format) -> f64 {
    let v = Fp8Value::new(bits, format);
    let e = v.exp_field();
    let m = v.man_field();
    let top = (1u32 << format.exp_bits()) - 1;
    let mag = match format {
        Fp8Format::E4M3 if e == top && m == 7 => f64::NAN,
        Fp8Format::E5M2 if e == top && m == 0 => f64::INFINITY,
        Fp8Format::E5M2 if e == top => f64::NAN,
        _ => {
            let (sig, exp) = v.significand();
            sig as f64 * 2f64.powi(exp)
        }
    };
    if v.sign() {
        -mag
    } else {
        mag
    }
}

/// Round-to-nearest-even encode. E4M3 saturates to +-448 on overflow; E5M2
/// overflows to infinity.
pub fn fp8_encode(x: f64, format: Fp8Format) -> Fp8Value {
    let sign = if x.is_sign_negative() { 0x80u8 } else { 0 };
    if x.is_nan() {
        return Fp8Value::new(format.nan_code(), format);
    }
    let a = x.abs();
    let mag = if a == 0.0 {
        0
    } else {
        let man = format.man_bits() as i32;
        let min_exp = 1 - format.bias();
        let exp = if a.is_infinite() {
            i32::MAX / 2
        } else {
            (((a.to_bits() >> 52) & 0x7FF) as i32 - 1023).max(min_exp)
        };
        if exp > 2 * format.bias() + 2 {
            i64::MAX
        } else {
            // Magnitude codes are linear in the significand across binades.
            let code = (a / 2f64.powi(exp - man)).round_ties_even() as i64;
            ((exp - min_exp) as i64) * (1 << man) + code
        }
    };
    let max = format.max_code() as i64;
    let mag = match format {
        Fp8Format::E4M3 => mag.min(max),
        Fp8Format::E5M2 if mag > max => 0x7C,
        Fp8Format::E5M2 => mag,
    };
    Fp8Value::new(sign | mag as u8, format)
}

/// `acc + a * b` in fp32. Mantissas are multiplied on the INT4 unit.
pub fn fp8_mac(a: Fp8Value, b: Fp8Value, acc: f32) -> f32 {
    if !a.is_finite() || !b.is_finite() {
        return (a.decode() as f32) * (b.decode() as f32) + acc;
    }
    let (ma, ea) = a.significand();
    let (mb, eb) = b.significand();
    let prod = mac_int4(Nibble::unsigned(ma as u8), Nibble::unsigned(mb as u8), 0);
    // At most 8 significant bits with exponent in [-32, 16]: exact in f32.
    let mag = prod as f32 * 2f32.powi(ea + eb);
    let p = if a.sign() != b.sign() { -mag } else { mag };
    acc + p
}
