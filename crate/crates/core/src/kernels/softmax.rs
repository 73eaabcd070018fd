//! Base-2 softmax on fixed-point rows.
//!
//! The exponent of each element is `(x_j - m) * log2(e)`, formed exactly as an
//! integer product, and evaluated with the shared `pow2` table. Terms are
//! accumulated in `acc_fmt` (U10.10 by default) and every output is
//! `round(2^out_frac * p_i / acc)`.
//!
//! * [`SoftmaxVariant::ThreePass`]: max pass, accumulation pass, output pass.
//!   Holds the `N` exponentials plus the sum. Depends only on `x_j - max`, so a
//!   constant offset on every input leaves the output bit-identical.
//! * [`SoftmaxVariant::TwoPassOnline`]: one pass keeps the running maximum and
//!   multiplies the running sum by `pow2(old - new)` whenever it grows; a
//!   second pass emits outputs. Holds O(1) state beyond the output buffer.
//!   The rescale goes through the same table, so it is not exact: outputs can
//!   differ from the three-pass variant by a few LSB when the maximum is not
//!   the first element.

use crate::counter;
use crate::error::{Error, Result};
use crate::qcore::{div_rne, pow2_raw, q, rshift_rne, FixedTensor, QFormat, RealTensor, LOG2E_Q15};

const P_FRAC: u32 = 15;
const P_MAX: i64 = (1 << 16) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxVariant {
    #[default]
    ThreePass,
    TwoPassOnline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxConfig {
    pub in_fmt: QFormat,
    pub out_fmt: QFormat,
    pub acc_fmt: QFormat,
    pub variant: SoftmaxVariant,
}

impl SoftmaxConfig {
    pub fn new(in_fmt: QFormat, out_fmt: QFormat) -> Self {
        Self {
            in_fmt,
            out_fmt,
            acc_fmt: q("U10.10"),
            variant: SoftmaxVariant::ThreePass,
        }
    }

    pub fn with_variant(mut self, variant: SoftmaxVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_fmt.is_signed() {
            return Err(Error::config("out_fmt", format!("{} must be unsigned", self.out_fmt)));
        }
        if self.acc_fmt.is_signed() || self.acc_fmt.int_bits() < 10 || self.acc_fmt.frac_bits() > P_FRAC {
            return Err(Error::config(
                "acc_fmt",
                format!("{} must be unsigned with >= 10 integer bits and <= 15 fractional bits", self.acc_fmt),
            ));
        }
        // Keeps |x * log2e| in i64 with room to spare.
        if self.in_fmt.width() > 32 || self.in_fmt.frac_bits() > 24 {
            return Err(Error::config("in_fmt", format!("{} is too wide", self.in_fmt)));
        }
        Ok(())
    }

    /// Longest row whose sum of at most-1 terms cannot overflow the accumulator.
    pub fn max_len(&self) -> usize {
        (1usize << self.acc_fmt.int_bits()) - 1
    }
}

/// Natural-base softmax in double precision with max subtraction.
pub fn softmax_ref(row: &RealTensor) -> Result<RealTensor> {
    let x = row.values();
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    RealTensor::new(row.shape().to_vec(), e.into_iter().map(|v| v / sum).collect())
}

/// Fixed-point softmax over a single row (any shape, flattened).
pub fn softmax_fixed(x: &FixedTensor, cfg: &SoftmaxConfig) -> Result<FixedTensor> {
    cfg.validate()?;
    if x.format() != cfg.in_fmt {
        return Err(Error::config(
            "in_fmt",
            format!("tensor is {} but config expects {}", x.format(), cfg.in_fmt),
        ));
    }
    let out = softmax_row(x.raw(), cfg)?;
    FixedTensor::with_format(x.shape().to_vec(), cfg.out_fmt, out)
}

/// Softmax applied independently to every row of the last axis.
pub fn softmax_fixed_rows(x: &FixedTensor, cfg: &SoftmaxConfig) -> Result<FixedTensor> {
    cfg.validate()?;
    if x.format() != cfg.in_fmt {
        return Err(Error::config(
            "in_fmt",
            format!("tensor is {} but config expects {}", x.format(), cfg.in_fmt),
        ));
    }
    let n = *x.shape().last().ok_or(Error::EmptyInput)?;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.raw().chunks(n) {
        out.extend(softmax_row(row, cfg)?);
    }
    FixedTensor::with_format(x.shape().to_vec(), cfg.out_fmt, out)
}

pub(crate) fn softmax_row(x: &[i64], cfg: &SoftmaxConfig) -> Result<Vec<i64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.len() > cfg.max_len() {
        return Err(Error::Capacity {
            what: "softmax row length for accumulator",
            limit: cfg.max_len(),
            got: x.len(),
        });
    }
    // One log2(e) multiply and one division per element.
    counter::add(2 * x.len() as u64);
    Ok(match cfg.variant {
        SoftmaxVariant::ThreePass => three_pass(x, cfg),
        SoftmaxVariant::TwoPassOnline => two_pass_online(x, cfg),
    })
}

/// Exponent fractional bits after the log2(e) product.
fn exp_frac(cfg: &SoftmaxConfig) -> u32 {
    cfg.in_fmt.frac_bits() + P_FRAC
}

fn to_acc(p: i64, cfg: &SoftmaxConfig) -> i64 {
    rshift_rne(p as i128, P_FRAC - cfg.acc_fmt.frac_bits()) as i64
}

fn emit(p: i64, acc: i64, cfg: &SoftmaxConfig) -> i64 {
    let num = (p as i128) << (cfg.out_fmt.frac_bits() + cfg.acc_fmt.frac_bits());
    let den = (acc as i128) << P_FRAC;
    cfg.out_fmt.saturate_wide(div_rne(num, den))
}

fn three_pass(x: &[i64], cfg: &SoftmaxConfig) -> Vec<i64> {
    let ef = exp_frac(cfg);
    let m = *x.iter().max().expect("non-empty");
    let p: Vec<i64> = x
        .iter()
        .map(|&v| pow2_raw((v - m) * LOG2E_Q15, ef, P_FRAC, P_MAX))
        .collect();
    let acc_max = cfg.acc_fmt.max_raw();
    let acc = p.iter().fold(0i64, |acc, &pj| (acc + to_acc(pj, cfg)).min(acc_max));
    p.iter().map(|&pi| emit(pi, acc, cfg)).collect()
}

fn two_pass_online(x: &[i64], cfg: &SoftmaxConfig) -> Vec<i64> {
    let ef = exp_frac(cfg);
    let acc_max = cfg.acc_fmt.max_raw();
    // Running maximum (in exponent units) and the sum of terms relative to it.
    let mut m = i64::MIN;
    let mut acc = 0i64;
    for &v in x {
        let t = v * LOG2E_Q15;
        if t > m {
            if m != i64::MIN {
                let scale = pow2_raw(m - t, ef, P_FRAC, P_MAX);
                acc = rshift_rne(acc as i128 * scale as i128, P_FRAC) as i64;
            }
            m = t;
        }
        let p = pow2_raw(t - m, ef, P_FRAC, P_MAX);
        acc = (acc + to_acc(p, cfg)).min(acc_max);
    }
    x.iter()
        .map(|&v| emit(pow2_raw(v * LOG2E_Q15 - m, ef, P_FRAC, P_MAX), acc, cfg))
        .collect()
}
