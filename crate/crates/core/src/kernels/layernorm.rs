//! Integer layer normalization.
//!
//! With `x = S * (X_Q - zp)` the scale and zero point cancel between the
//! numerator and the standard deviation, leaving
//!
//! ```text
//! y = (gamma * X_Q - gamma * mu(X_Q) + beta * sigma(X_Q)) / sigma(X_Q)
//! ```
//!
//! so only raw values enter. The mean is held in `mean_fmt` (S8.7), the
//! standard deviation in `std_fmt` (U8.6) as the floor square root of the
//! integer mean of squared deviations, and `gamma`/`beta` as Q.16 constants.

use crate::counter;
use crate::error::{Error, Result};
use crate::qcore::{div_rne, q, shift_round, FixedTensor, QFormat, RealTensor};

/// Fractional bits used for the gamma/beta constants.
const AFFINE_FRAC: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormConfig {
    pub in_fmt: QFormat,
    pub out_fmt: QFormat,
    pub mean_fmt: QFormat,
    pub std_fmt: QFormat,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
}

impl LayerNormConfig {
    /// S8.7 output and mean, U8.6 standard deviation, `gamma = 1`, `beta = 0`.
    pub fn new(in_fmt: QFormat, channels: usize) -> Self {
        Self {
            in_fmt,
            out_fmt: q("S8.7"),
            mean_fmt: q("S8.7"),
            std_fmt: q("U8.6"),
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            epsilon: 1e-5,
        }
    }

    /// Mean and standard deviation seven and six fractional bits finer than
    /// the input, for inputs that carry fractional bits of their own.
    /// Integer inputs get the same precision as `new`.
    pub fn scaled(in_fmt: QFormat, channels: usize) -> Self {
        let int = in_fmt.int_bits() + 1;
        let frac = (in_fmt.frac_bits() + 7).min(crate::qcore::MAX_WIDTH - 1 - int);
        Self {
            mean_fmt: QFormat::signed(int, frac).expect("width within limit"),
            std_fmt: QFormat::unsigned(int, frac - 1).expect("width within limit"),
            ..Self::new(in_fmt, channels)
        }
    }

    pub fn with_affine(mut self, gamma: Vec<f64>, beta: Vec<f64>) -> Self {
        self.gamma = gamma;
        self.beta = beta;
        self
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if c < 2 {
            return Err(Error::config("gamma", "layer norm needs at least 2 channels"));
        }
        if self.beta.len() != c {
            return Err(Error::config("beta", format!("length {} != channel count {c}", self.beta.len())));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.std_fmt.is_signed() {
            return Err(Error::config("std_fmt", "must be unsigned"));
        }
        if self.std_fmt.frac_bits() > self.mean_fmt.frac_bits() {
            return Err(Error::config("std_fmt", "cannot have more fractional bits than mean_fmt"));
        }
        if self.gamma.iter().chain(&self.beta).any(|v| !v.is_finite() || v.abs() > 32768.0) {
            return Err(Error::config("gamma", "affine parameters must be finite and |v| <= 2^15"));
        }
        Ok(())
    }
}

/// Population-variance layer norm in double precision.
pub fn layernorm_ref(row: &RealTensor, gamma: &[f64], beta: &[f64], epsilon: f64) -> Result<RealTensor> {
    let x = row.values();
    let c = x.len();
    if c < 2 {
        return Err(Error::config("channels", "layer norm needs at least 2 channels"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch {
            expected: vec![c],
            got: vec![gamma.len(), beta.len()],
        });
    }
    let mean = x.iter().sum::<f64>() / c as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
    let inv = 1.0 / (var + epsilon).sqrt();
    let out = x
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect();
    RealTensor::new(row.shape().to_vec(), out)
}

/// Fixed-point layer norm of one row of `C` channels.
pub fn layernorm_fixed(x: &FixedTensor, cfg: &LayerNormConfig) -> Result<FixedTensor> {
    cfg.validate()?;
    check_input(x, cfg)?;
    if x.len() != cfg.channels() {
        return Err(Error::ShapeMismatch {
            expected: vec![cfg.channels()],
            got: x.shape().to_vec(),
        });
    }
    let out = layernorm_row(x.raw(), cfg);
    FixedTensor::with_format(x.shape().to_vec(), cfg.out_fmt, out)
}

/// Layer norm over the last axis of a `rows x C` tensor.
pub fn layernorm_fixed_rows(x: &FixedTensor, cfg: &LayerNormConfig) -> Result<FixedTensor> {
    cfg.validate()?;
    check_input(x, cfg)?;
    let c = *x.shape().last().ok_or(Error::EmptyInput)?;
    if c != cfg.channels() {
        return Err(Error::ShapeMismatch {
            expected: vec![cfg.channels()],
            got: x.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.raw().chunks(c) {
        out.extend(layernorm_row(row, cfg));
    }
    FixedTensor::with_format(x.shape().to_vec(), cfg.out_fmt, out)
}

fn check_input(x: &FixedTensor, cfg: &LayerNormConfig) -> Result<()> {
    if x.format() != cfg.in_fmt {
        return Err(Error::config(
            "in_fmt",
            format!("tensor is {} but config expects {}", x.format(), cfg.in_fmt),
        ));
    }
    Ok(())
}

/// Scale `num / den` by `2^shift` and round once.
fn ratio_shifted(num: i128, den: i128, shift: i32) -> i128 {
    if shift >= 0 {
        div_rne(num << shift, den)
    } else {
        div_rne(num, den << -shift)
    }
}

fn quantize_const(v: f64) -> i128 {
    (v * (1u64 << AFFINE_FRAC) as f64).round_ties_even() as i128
}

pub(crate) fn layernorm_row(x: &[i64], cfg: &LayerNormConfig) -> Vec<i64> {
    let c = x.len() as i128;
    let in_frac = cfg.in_fmt.frac_bits() as i32;
    let mean_frac = cfg.mean_fmt.frac_bits() as i32;
    let std_frac = cfg.std_fmt.frac_bits() as i32;
    let out_frac = cfg.out_fmt.frac_bits() as i32;

    let sum: i128 = x.iter().map(|&v| v as i128).sum();
    let mean = cfg.mean_fmt.saturate_wide(ratio_shifted(sum, c, mean_frac - in_frac)) as i128;

    // Deviations at the mean's fractional precision.
    let dev: Vec<i128> = x
        .iter()
        .map(|&v| shift_round(v as i128, mean_frac - in_frac) - mean)
        .collect();
    let sq: i128 = dev.iter().map(|d| d * d).sum();
    // Mean square in units of 2^(-2 * std_frac), floored at one LSB^2.
    let var = ratio_shifted(sq, c, 2 * (std_frac - mean_frac)).max(1);
    let sigma = (var as u128).isqrt().min(cfg.std_fmt.max_raw() as u128).max(1) as i128;

    counter::add(3 * x.len() as u64);

    dev.iter()
        .zip(cfg.gamma.iter().zip(&cfg.beta))
        .map(|(&d, (&g, &b))| {
            let gamma = quantize_const(g);
            let beta = quantize_const(b);
            // Common unit 2^-(mean_frac + std_frac + AFFINE_FRAC).
            let num = ((gamma * d) << std_frac) + ((beta * sigma) << mean_frac);
            let shift = out_frac - mean_frac - AFFINE_FRAC as i32;
            cfg.out_fmt.saturate_wide(ratio_shifted(num, sigma, shift))
        })
        .collect()
}
