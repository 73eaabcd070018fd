//! Matrix multiply on the composed MAC units.
//!
//! Integer modes multiply raw operands through the INT4 compositions and
//! accumulate exactly over `k` in canonical order. A nonzero activation zero
//! point is removed with the usual integer-GEMM identity
//!
//! ```text
//! sum_k (a_ik - zp) * b_kj = sum_k a_ik * b_kj - zp * sum_k b_kj
//! ```
//!
//! so the inner loop never sees it. Weights must have zero point 0. The
//! accumulator is then scaled by `scale_A * scale_B` and quantized with the
//! output parameters.
//!
//! FP8 modes dequantize both operands, pick a per-tensor scale factor so the
//! largest magnitude maps to the format maximum, encode, and run the FP8 MAC
//! with fp32 partial sums over tiles of 256 along `k`.

use rayon::prelude::*;

use super::fp8::{fp8_encode, fp8_mac, Fp8Format, Fp8Value};
use super::int4::{mul_int16_via_int4, mul_int4, mul_int8_via_int4};
use crate::counter;
use crate::error::{Error, Result};
use crate::qcore::{quantize, FixedTensor, QFormat, QuantParams, RealTensor};

/// Length of one fp32 partial sum in the FP8 modes.
pub const FP8_TILE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacMode {
    Int4,
    Int8,
    Int16,
    E4M3,
    E5M2,
}

impl MacMode {
    pub const ALL: [MacMode; 5] = [MacMode::Int4, MacMode::Int8, MacMode::Int16, MacMode::E4M3, MacMode::E5M2];

    pub fn name(self) -> &'static str {
        match self {
            MacMode::Int4 => "int4",
            MacMode::Int8 => "int8",
            MacMode::Int16 => "int16",
            MacMode::E4M3 => "e4m3",
            MacMode::E5M2 => "e5m2",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown MAC mode {s:?}")))
    }

    /// Operand width for the integer modes.
    pub fn int_bits(self) -> Option<u32> {
        match self {
            MacMode::Int4 => Some(4),
            MacMode::Int8 => Some(8),
            MacMode::Int16 => Some(16),
            MacMode::E4M3 | MacMode::E5M2 => None,
        }
    }

    /// INT4 unit passes per multiply.
    pub fn int4_units(self) -> u32 {
        match self {
            MacMode::Int4 => 1,
            MacMode::Int8 | MacMode::E4M3 | MacMode::E5M2 => 2,
            MacMode::Int16 => 4,
        }
    }

    fn fp8(self) -> Option<Fp8Format> {
        match self {
            MacMode::E4M3 => Some(Fp8Format::E4M3),
            MacMode::E5M2 => Some(Fp8Format::E5M2),
            _ => None,
        }
    }
}

impl std::fmt::Display for MacMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulator {
    Int32,
    /// Used by the INT16 mode: two worst-case products already exceed int32.
    Int64,
    Fp32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacUnitConfig {
    pub mode: MacMode,
    pub acc: Accumulator,
}

impl MacUnitConfig {
    pub fn new(mode: MacMode) -> Self {
        let acc = match mode {
            MacMode::Int4 | MacMode::Int8 => Accumulator::Int32,
            MacMode::Int16 => Accumulator::Int64,
            MacMode::E4M3 | MacMode::E5M2 => Accumulator::Fp32,
        };
        Self { mode, acc }
    }

    /// Largest inner dimension with no possible accumulator overflow.
    ///
    /// | mode  | max product | acc   | K bound |
    /// |-------|-------------|-------|---------|
    /// | int4  | 2^6         | int32 | 2^24    |
    /// | int8  | 2^14        | int32 | 2^16    |
    /// | int16 | 2^30        | int64 | 2^16    |
    /// | fp8   | -           | fp32  | 2^16    |
    pub fn max_k(&self) -> usize {
        match self.mode {
            MacMode::Int4 => 1 << 24,
            _ => 1 << 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::new(self.mode).acc;
        if self.acc != expected {
            return Err(Error::InvalidParams(format!(
                "{} mode needs a {:?} accumulator, got {:?}",
                self.mode, expected, self.acc
            )));
        }
        Ok(())
    }
}

/// Double-precision product of `M x K` and `K x N` matrices.
pub fn matmul_ref(a: &RealTensor, b: &RealTensor) -> Result<RealTensor> {
    let (m, k, n) = dims(a.shape(), b.shape())?;
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| av[i * k + p] * bv[p * n + j]).sum();
        }
    }
    RealTensor::new(vec![m, n], out)
}

/// Quantized product. Counts `M * N * K` multiplies.
pub fn matmul_fixed(
    a: &FixedTensor,
    b: &FixedTensor,
    unit: &MacUnitConfig,
    out_fmt: QFormat,
    out_params: QuantParams,
) -> Result<FixedTensor> {
    unit.validate()?;
    let (m, k, n) = dims(a.shape(), b.shape())?;
    check_k(k, unit)?;
    let real: Vec<f64> = match unit.mode.fp8() {
        None => {
            let acc = int_accumulate(a, b, unit, m, k, n)?;
            let s = a.params().scale() * b.params().scale();
            acc.into_iter().map(|v| v as f64 * s).collect()
        }
        Some(fmt) => fp8_matmul(a, b, fmt, m, k, n),
    };
    counter::add((m * n * k) as u64);
    let raw = real.into_iter().map(|v| quantize(v, out_fmt, out_params)).collect();
    FixedTensor::new(vec![m, n], out_fmt, out_params, raw)
}

/// Integer accumulators of an integer-mode product, zero-point corrected,
/// before any scaling. Does not touch the multiply counter.
pub fn matmul_accumulate(a: &FixedTensor, b: &FixedTensor, unit: &MacUnitConfig) -> Result<Vec<i64>> {
    unit.validate()?;
    let (m, k, n) = dims(a.shape(), b.shape())?;
    check_k(k, unit)?;
    int_accumulate(a, b, unit, m, k, n)
}

fn dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::ShapeMismatch {
            expected: a.to_vec(),
            got: b.to_vec(),
        }),
    }
}

fn check_k(k: usize, unit: &MacUnitConfig) -> Result<()> {
    if k > unit.max_k() {
        return Err(Error::Capacity {
            what: "matmul inner dimension for accumulator",
            limit: unit.max_k(),
            got: k,
        });
    }
    Ok(())
}

/// Operands must fit the mode's signed operand width.
fn check_operand(t: &FixedTensor, bits: u32, which: &str) -> Result<()> {
    let fmt = t.format();
    let fits = if fmt.is_signed() { fmt.width() <= bits } else { fmt.width() < bits };
    if !fits {
        return Err(Error::InvalidParams(format!(
            "{which} format {fmt} does not fit a {bits}-bit signed operand"
        )));
    }
    Ok(())
}

fn int_accumulate(
    a: &FixedTensor,
    b: &FixedTensor,
    unit: &MacUnitConfig,
    m: usize,
    k: usize,
    n: usize,
) -> Result<Vec<i64>> {
    let bits = unit.mode.int_bits().ok_or_else(|| {
        Error::InvalidParams(format!("{} is not an integer MAC mode", unit.mode))
    })?;
    check_operand(a, bits, "left operand")?;
    check_operand(b, bits, "right operand")?;
    if b.params().zero_point() != 0 {
        return Err(Error::InvalidParams("right operand (weights) must have zero point 0".into()));
    }
    let zp = a.params().zero_point();
    let (ar, br) = (a.raw(), b.raw());

    // Column sums of B for the zero-point correction.
    let col_sums: Vec<i64> = (0..n).map(|j| (0..k).map(|p| br[p * n + j]).sum()).collect();

    let mut out = vec![0i64; m * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let arow = &ar[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let col = (0..k).map(|p| br[p * n + j]);
            let dot = match unit.mode {
                MacMode::Int4 => arow
                    .iter()
                    .zip(col)
                    .fold(0i32, |s, (&x, y)| s + mul_int4(x as i8, y as i8)) as i64,
                MacMode::Int8 => arow
                    .iter()
                    .zip(col)
                    .fold(0i32, |s, (&x, y)| s + mul_int8_via_int4(x as i8, y as i8) as i32)
                    as i64,
                MacMode::Int16 => arow
                    .iter()
                    .zip(col)
                    .fold(0i64, |s, (&x, y)| s + mul_int16_via_int4(x as i16, y as i16) as i64),
                MacMode::E4M3 | MacMode::E5M2 => unreachable!("checked above"),
            };
            *o = dot - zp * col_sums[j];
        }
    });
    Ok(out)
}

/// Power-of-two-free per-tensor scale so that `amax / scale` is the format maximum.
fn fp8_scale(values: &[f64], fmt: Fp8Format) -> f64 {
    let amax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if amax == 0.0 {
        1.0
    } else {
        amax / fmt.max_finite()
    }
}

fn fp8_matmul(a: &FixedTensor, b: &FixedTensor, fmt: Fp8Format, m: usize, k: usize, n: usize) -> Vec<f64> {
    let av = a.dequantize().into_values();
    let bv = b.dequantize().into_values();
    let (sa, sb) = (fp8_scale(&av, fmt), fp8_scale(&bv, fmt));
    let ae: Vec<Fp8Value> = av.iter().map(|&v| fp8_encode(v / sa, fmt)).collect();
    let be: Vec<Fp8Value> = bv.iter().map(|&v| fp8_encode(v / sb, fmt)).collect();
    let scale = sa * sb;

    let mut out = vec![0.0f64; m * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, o) in row.iter_mut().enumerate() {
            let mut total = 0.0f32;
            for t in (0..k).step_by(FP8_TILE) {
                let partial = (t..(t + FP8_TILE).min(k))
                    .fold(0.0f32, |acc, p| fp8_mac(ae[i * k + p], be[p * n + j], acc));
                total += partial;
            }
            *o = total as f64 * scale;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::q;

    fn fixed(shape: Vec<usize>, fmt: &str, raw: Vec<i64>) -> FixedTensor {
        FixedTensor::with_format(shape, q(fmt), raw).unwrap()
    }

    fn unit_params() -> QuantParams {
        QuantParams::new(1.0, 0).unwrap()
    }

    #[test]
    fn identity() {
        let eye: Vec<i64> = (0..16).map(|i| (i % 5 == 0) as i64).collect();
        let eye = fixed(vec![4, 4], "S7", eye).with_params(unit_params());
        let a = fixed(vec![4, 4], "S7", (0..16).map(|i| i * 7 - 50).collect()).with_params(unit_params());
        for mode in [MacMode::Int8, MacMode::Int16] {
            let out = matmul_fixed(&eye, &a, &MacUnitConfig::new(mode), q("S15"), unit_params()).unwrap();
            assert_eq!(out.raw(), a.raw());
        }
    }

    #[test]
    fn all_ones_k256() {
        let a = fixed(vec![1, 256], "S7", vec![1; 256]).with_params(unit_params());
        let b = fixed(vec![256, 1], "S7", vec![1; 256]).with_params(unit_params());
        let out = matmul_fixed(&a, &b, &MacUnitConfig::new(MacMode::Int8), q("S15"), unit_params()).unwrap();
        assert_eq!(out.raw(), &[256]);
    }

    #[test]
    fn zero_point_correction() {
        let a = fixed(vec![2, 3], "S7", vec![5, -3, 7, 0, 1, 2]).with_params(QuantParams::new(1.0, 2).unwrap());
        let b = fixed(vec![3, 2], "S7", vec![1, 2, 3, 4, 5, 6]).with_params(unit_params());
        let acc = matmul_accumulate(&a, &b, &MacUnitConfig::new(MacMode::Int8)).unwrap();
        // (a - 2) = [[3,-5,5],[-2,-1,0]]
        assert_eq!(acc, vec![3 - 15 + 25, 6 - 20 + 30, -2 - 3, -4 - 4]);
        let bad = b.clone().with_params(QuantParams::new(1.0, 1).unwrap());
        assert!(matmul_accumulate(&a, &bad, &MacUnitConfig::new(MacMode::Int8)).is_err());
    }

    #[test]
    fn rejects_shapes_and_widths() {
        let a = fixed(vec![2, 3], "S7", vec![0; 6]);
        let b = fixed(vec![2, 3], "S7", vec![0; 6]);
        let unit = MacUnitConfig::new(MacMode::Int8);
        assert!(matches!(
            matmul_fixed(&a, &b, &unit, q("S15"), unit_params()),
            Err(Error::ShapeMismatch { .. })
        ));
        let wide = fixed(vec![3, 2], "S6.9", vec![0; 6]);
        assert!(matmul_fixed(&a, &wide, &unit, q("S15"), unit_params()).is_err());
        let u8b = fixed(vec![3, 2], "U8", vec![0; 6]);
        assert!(matmul_fixed(&a, &u8b, &unit, q("S15"), unit_params()).is_err());
        let long_a = fixed(vec![1, (1 << 16) + 1], "S7", vec![0; (1 << 16) + 1]);
        let long_b = fixed(vec![(1 << 16) + 1, 1], "S7", vec![0; (1 << 16) + 1]);
        assert!(matches!(
            matmul_fixed(&long_a, &long_b, &unit, q("S15"), unit_params()),
            Err(Error::Capacity { .. })
        ));
        let bad = MacUnitConfig {
            mode: MacMode::Int8,
            acc: Accumulator::Fp32,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fp8_small_integers_exact() {
        let a = fixed(vec![2, 2], "S7", vec![1, 2, 3, 4]).with_params(unit_params());
        let b = fixed(vec![2, 2], "S7", vec![2, 0, 1, 2]).with_params(unit_params());
        for mode in [MacMode::E4M3, MacMode::E5M2] {
            let out = matmul_fixed(&a, &b, &MacUnitConfig::new(mode), q("S15"), unit_params()).unwrap();
            // 448/4 and 57344/4 are not representable scale-exact, so allow one unit.
            for (&o, want) in out.raw().iter().zip([4, 4, 10, 8]) {
                assert!((o - want).abs() <= 1, "{mode}: {o} vs {want}");
            }
        }
    }

    #[test]
    fn ref_examples() {
        let eye = RealTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = RealTensor::new(vec![2, 2], vec![1.5, -2.0, 0.25, 8.0]).unwrap();
        assert_eq!(matmul_ref(&eye, &a).unwrap().values(), a.values());
        let z = RealTensor::zeros(vec![2, 2]);
        assert!(matmul_ref(&a, &z).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn counts_macs() {
        let a = fixed(vec![3, 5], "S7", vec![1; 15]);
        let b = fixed(vec![5, 2], "S7", vec![1; 10]);
        let (_, macs) = counter::measure(|| {
            matmul_fixed(&a, &b, &MacUnitConfig::new(MacMode::Int8), q("S15"), unit_params()).unwrap()
        });
        assert_eq!(macs, 30);
    }
}
