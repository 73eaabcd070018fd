//! INT4 multiply-accumulate unit and the INT8/INT16 multipliers built from it.
//!
//! A two's-complement operand is split into nibbles with the top nibble
//! signed and every lower nibble unsigned, `a = sum_k a_k * 16^k`. That is the
//! only split for which recombining partial products with shifts is exact.
//! An INT8 multiply then takes two unit passes (one per nibble of `a`, each
//! doing two nibble MACs against `b`); INT16 takes four.

/// A 4-bit operand: signed `[-8, 7]` or unsigned `[0, 15]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nibble {
    Signed(i8),
    Unsigned(u8),
}

impl Nibble {
    pub fn signed(v: i8) -> Self {
        debug_assert!((-8..=7).contains(&v), "signed nibble out of range: {v}");
        Nibble::Signed(v)
    }

    pub fn unsigned(v: u8) -> Self {
        debug_assert!(v <= 15, "unsigned nibble out of range: {v}");
        Nibble::Unsigned(v)
    }

    pub fn value(self) -> i32 {
        match self {
            Nibble::Signed(v) => v as i32,
            Nibble::Unsigned(v) => v as i32,
        }
    }
}

/// The base unit: `acc + a * b` with 4-bit operands.
#[inline]
pub fn mac_int4(a: Nibble, b: Nibble, acc: i32) -> i32 {
    acc + a.value() * b.value()
}

/// Splits `v` (a `bits`-wide two's-complement value) into nibbles, least significant first.
fn nibbles(v: i32, bits: u32) -> impl Iterator<Item = Nibble> {
    let count = bits / 4;
    (0..count).map(move |k| {
        let raw = (v >> (4 * k)) & 0xF;
        if k + 1 == count {
            // Sign-extend the top nibble.
            Nibble::signed(((raw << 28) >> 28) as i8)
        } else {
            Nibble::unsigned(raw as u8)
        }
    })
}

/// One unit pass: nibble `a_k` of the left operand against every nibble of `b`,
/// recombined with shifts.
fn unit_pass(a_k: Nibble, b: i32, bits: u32) -> i32 {
    nibbles(b, bits)
        .enumerate()
        .fold(0i32, |acc, (j, b_j)| acc.wrapping_add(mac_int4(a_k, b_j, 0) << (4 * j)))
}

fn composed(a: i32, b: i32, bits: u32) -> i32 {
    nibbles(a, bits)
        .enumerate()
        .fold(0i32, |acc, (k, a_k)| acc.wrapping_add(unit_pass(a_k, b, bits) << (4 * k)))
}

/// INT8 x INT8 via two INT4 unit passes; equal to the widening product.
pub fn mul_int8_via_int4(a: i8, b: i8) -> i16 {
    composed(a as i32, b as i32, 8) as i16
}

/// INT16 x INT16 via four INT4 unit passes; equal to the widening product.
pub fn mul_int16_via_int4(a: i16, b: i16) -> i32 {
    // Partial sums are exact modulo 2^32 and the true product fits in i32.
    composed(a as i32, b as i32, 16)
}

/// Signed 4-bit product through a single MAC.
pub fn mul_int4(a: i8, b: i8) -> i32 {
    mac_int4(Nibble::signed(a), Nibble::signed(b), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_examples() {
        assert_eq!(mac_int4(Nibble::signed(0), Nibble::signed(7), 100), 100);
        assert_eq!(mac_int4(Nibble::signed(-8), Nibble::signed(-8), 0), 64);
        assert_eq!(mac_int4(Nibble::signed(3), Nibble::signed(-5), 10), -5);
        assert_eq!(mac_int4(Nibble::unsigned(15), Nibble::unsigned(15), 0), 225);
    }

    #[test]
    fn split_recombines() {
        for a in i8::MIN..=i8::MAX {
            let v: i32 = nibbles(a as i32, 8).enumerate().map(|(k, n)| n.value() << (4 * k)).sum();
            assert_eq!(v, a as i32);
        }
    }

    #[test]
    fn int8_examples() {
        assert_eq!(mul_int8_via_int4(0, 117), 0);
        assert_eq!(mul_int8_via_int4(-128, -128), 16384);
        assert_eq!(mul_int8_via_int4(-128, 127), -16256);
    }

    #[test]
    fn int16_examples() {
        for x in [-32768i16, -1, 0, 1, 12345, 32767] {
            assert_eq!(mul_int16_via_int4(1, x), x as i32);
        }
        assert_eq!(mul_int16_via_int4(-32768, -32768), 1_073_741_824);
    }
}
