use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Maximum total width (sign + integer + fraction) of a [`QFormat`].
pub const MAX_WIDTH: u32 = 32;

/// A fixed-point layout: optional sign bit, integer bits and fractional bits.
///
/// Written as `S6.9` (signed, 6 integer, 9 fractional), `U1.15`, or `S7`
/// when there is no fractional part. Signed formats are two's complement,
/// so the raw range of `S6.9` is `[-2^15, 2^15 - 1]`. The real value of a
/// raw integer `r` is `r * 2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    signed: bool,
    int_bits: u8,
    frac_bits: u8,
}

impl QFormat {
    pub fn new(signed: bool, int_bits: u32, frac_bits: u32) -> Result<Self> {
        let width = signed as u32 + int_bits + frac_bits;
        if width == 0 || width > MAX_WIDTH || int_bits + frac_bits == 0 {
            return Err(Error::InvalidFormat(format!(
                "{}{}.{} (width {width})",
                if signed { 'S' } else { 'U' },
                int_bits,
                frac_bits
            )));
        }
        Ok(Self {
            signed,
            int_bits: int_bits as u8,
            frac_bits: frac_bits as u8,
        })
    }

    pub fn signed(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(true, int_bits, frac_bits)
    }

    pub fn unsigned(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(false, int_bits, frac_bits)
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits as u32
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits as u32
    }

    pub fn width(&self) -> u32 {
        self.signed as u32 + self.int_bits as u32 + self.frac_bits as u32
    }

    /// Magnitude bits, i.e. width without the sign.
    fn mag_bits(&self) -> u32 {
        self.int_bits as u32 + self.frac_bits as u32
    }

    pub fn min_raw(&self) -> i64 {
        if self.signed {
            -(1i64 << self.mag_bits())
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << self.mag_bits()) - 1
    }

    pub fn contains(&self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    pub fn saturate(&self, raw: i64) -> i64 {
        raw.clamp(self.min_raw(), self.max_raw())
    }

    pub(crate) fn saturate_wide(&self, raw: i128) -> i64 {
        raw.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }

    /// Value of one raw step, `2^-frac_bits`.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn to_real(&self, raw: i64) -> f64 {
        raw as f64 * self.lsb()
    }

    pub fn min_value(&self) -> f64 {
        self.to_real(self.min_raw())
    }

    pub fn max_value(&self) -> f64 {
        self.to_real(self.max_raw())
    }

    /// Two's-complement negation that maps the most negative raw value to the maximum.
    pub fn saturating_neg(&self, raw: i64) -> i64 {
        self.saturate(-raw)
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { 'S' } else { 'U' };
        if self.frac_bits == 0 {
            write!(f, "{s}{}", self.int_bits)
        } else {
            write!(f, "{s}{}.{}", self.int_bits, self.frac_bits)
        }
    }
}

impl FromStr for QFormat {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(text.to_string());
        let mut chars = text.chars();
        let signed = match chars.next() {
            Some('S') => true,
            Some('U') => false,
            _ => return Err(bad()),
        };
        let rest = chars.as_str();
        let (int_part, frac_part) = match rest.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (rest, None),
        };
        let digits = |s: &str| -> Result<u32> {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            s.parse().map_err(|_| bad())
        };
        let int_bits = digits(int_part)?;
        let frac_bits = match frac_part {
            Some(f) => digits(f)?,
            None => 0,
        };
        QFormat::new(signed, int_bits, frac_bits).map_err(|_| bad())
    }
}

impl serde::Serialize for QFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for QFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Shorthand for tests and constant tables; panics on a malformed literal.
pub fn q(text: &str) -> QFormat {
    text.parse()
        .unwrap_or_else(|e| panic!("bad format literal {text}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranges() {
        let f = q("S6.9");
        assert_eq!(f.width(), 16);
        assert_eq!(f.min_raw(), -32768);
        assert_eq!(f.max_raw(), 32767);
        assert_eq!(f.max_value(), 63.998046875);

        let u = q("U1.15");
        assert_eq!(u.width(), 16);
        assert_eq!(u.max_raw(), 65535);
        assert!(u.contains(32768));

        assert_eq!(q("U8.6").width(), 14);
        assert_eq!(q("S7").max_raw(), 127);
        assert_eq!(q("S7").min_raw(), -128);
        assert_eq!(q("U8").max_raw(), 255);
    }

    #[test]
    fn parse_print() {
        for s in ["S6.9", "S5.2", "U1.15", "U1.7", "S8.7", "U8.6", "U10.10", "S5.10", "S3.4", "S7", "U8"] {
            assert_eq!(q(s).to_string(), s);
        }
        assert_eq!(q("S7.0"), q("S7"));
    }

    #[test]
    fn parse_rejects() {
        for s in ["", "s6.9", "S", "S.9", "S6.", "X1.2", "S6.9.1", "S-1.2", "S20.20", "U0.0", "S 6.9"] {
            assert!(s.parse::<QFormat>().is_err(), "{s} should not parse");
        }
    }

    #[test]
    fn saturating_neg_maps_min_to_max() {
        let f = q("S7");
        assert_eq!(f.saturating_neg(-128), 127);
        assert_eq!(f.saturating_neg(5), -5);
    }

    proptest! {
        #[test]
        fn round_trips(signed in any::<bool>(), i in 0u32..16, fr in 0u32..16) {
            prop_assume!(i + fr > 0);
            let f = QFormat::new(signed, i, fr).unwrap();
            prop_assert_eq!(f.to_string().parse::<QFormat>().unwrap(), f);
        }
    }
}
