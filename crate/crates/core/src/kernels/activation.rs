//! Activation functions on fixed-point tensors.
//!
//! Every exponential goes through the shared base-2 table. GELU uses the
//! sigmoid approximant `x * sigmoid(1.702 x)`; its exponent `1.702 * log2(e) * x`
//! is formed with shifts, `X_p = (X << 1) + (X >> 1) - (X >> 4) = 2.4375 X`,
//! and the sigmoid is evaluated as the overflow-free ratio
//! `exp_i / (exp_i + exp_ref)` where both exponentials are taken relative to
//! `max(X_p, 0)`. See `docs/gelu.md` for the derivation.

use crate::counter;
use crate::error::{Error, Result};
use crate::qcore::{div_rne, pow2_raw, requantize, shift_round, FixedTensor, QFormat, LOG2E_Q15};

/// Fractional bits of the exponentials fed into the sigmoid ratio.
const P_FRAC: u32 = 15;
const P_MAX: i64 = (1 << 16) - 1;
/// Fractional bits of the kind-specific constants.
const CONST_FRAC: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Gelu,
    Relu,
    LeakyRelu,
    Elu,
    Selu,
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 7] = [
        ActivationKind::Gelu,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Elu,
        ActivationKind::Selu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Gelu => "gelu",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Elu => "elu",
            ActivationKind::Selu => "selu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationConfig {
    pub kind: ActivationKind,
    pub in_fmt: QFormat,
    pub out_fmt: QFormat,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    pub selu_alpha: f64,
    pub selu_lambda: f64,
}

impl ActivationConfig {
    pub fn new(kind: ActivationKind, in_fmt: QFormat, out_fmt: QFormat) -> Self {
        Self {
            kind,
            in_fmt,
            out_fmt,
            leaky_slope: 0.01,
            elu_alpha: 1.0,
            selu_alpha: 1.6733,
            selu_lambda: 1.0507,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("leaky_slope", self.leaky_slope),
            ("elu_alpha", self.elu_alpha),
            ("selu_alpha", self.selu_alpha),
            ("selu_lambda", self.selu_lambda),
        ] {
            if !(v > 0.0 && v < 1024.0) {
                return Err(Error::config(key, format!("must be in (0, 1024), got {v}")));
            }
        }
        if self.in_fmt.frac_bits() > 24 {
            return Err(Error::config("in_fmt", format!("{} has too many fractional bits", self.in_fmt)));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Real-arithmetic activation. GELU is the `x * sigmoid(1.702 x)` approximant.
pub fn activation_ref(x: f64, cfg: &ActivationConfig) -> f64 {
    match cfg.kind {
        ActivationKind::Gelu => x * sigmoid(1.702 * x),
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::LeakyRelu => {
            if x > 0.0 {
                x
            } else {
                cfg.leaky_slope * x
            }
        }
        ActivationKind::Elu => {
            if x > 0.0 {
                x
            } else {
                cfg.elu_alpha * x.exp_m1()
            }
        }
        ActivationKind::Selu => {
            cfg.selu_lambda
                * if x > 0.0 {
                    x
                } else {
                    cfg.selu_alpha * x.exp_m1()
                }
        }
        ActivationKind::Sigmoid => sigmoid(x),
        ActivationKind::Tanh => x.tanh(),
    }
}

pub fn activation_fixed(x: &FixedTensor, cfg: &ActivationConfig) -> Result<FixedTensor> {
    cfg.validate()?;
    if x.format() != cfg.in_fmt {
        return Err(Error::config(
            "in_fmt",
            format!("tensor is {} but config expects {}", x.format(), cfg.in_fmt),
        ));
    }
    let k = Kernel::new(cfg);
    let out: Vec<i64> = x.raw().iter().map(|&v| k.apply(v)).collect();
    counter::add(k.muls_per_element() * x.len() as u64);
    FixedTensor::with_format(x.shape().to_vec(), cfg.out_fmt, out)
}

/// Raw-domain activation of one element; exposed for the sweep engine.
pub fn activation_raw(x: i64, cfg: &ActivationConfig) -> i64 {
    Kernel::new(cfg).apply(x)
}

/// Pre-quantized constants for one configuration.
struct Kernel {
    kind: ActivationKind,
    in_fmt: QFormat,
    out_fmt: QFormat,
    slope: i128,
    elu_alpha: i128,
    selu_alpha: i128,
    selu_lambda: i128,
}

fn qconst(v: f64) -> i128 {
    (v * (1u64 << CONST_FRAC) as f64).round_ties_even() as i128
}

impl Kernel {
    fn new(cfg: &ActivationConfig) -> Self {
        Self {
            kind: cfg.kind,
            in_fmt: cfg.in_fmt,
            out_fmt: cfg.out_fmt,
            slope: qconst(cfg.leaky_slope),
            elu_alpha: qconst(cfg.elu_alpha),
            selu_alpha: qconst(cfg.selu_alpha),
            selu_lambda: qconst(cfg.selu_lambda),
        }
    }

    fn muls_per_element(&self) -> u64 {
        match self.kind {
            ActivationKind::Relu => 0,
            ActivationKind::LeakyRelu | ActivationKind::Elu => 1,
            ActivationKind::Gelu | ActivationKind::Sigmoid | ActivationKind::Tanh | ActivationKind::Selu => 2,
        }
    }

    fn in_frac(&self) -> i32 {
        self.in_fmt.frac_bits() as i32
    }

    fn out_frac(&self) -> i32 {
        self.out_fmt.frac_bits() as i32
    }

    /// Saturates a value carrying `frac` fractional bits into the output format.
    fn emit(&self, v: i128, frac: i32) -> i64 {
        self.out_fmt.saturate_wide(shift_round(v, self.out_frac() - frac))
    }

    /// `(exp_i, exp_ref)` for an exponent `y` with `frac` fractional bits:
    /// `2^(y - M)` and `2^(-M)` with `M = max(y, 0)`, both in U1.15.
    fn stabilized_pair(y: i64, frac: u32) -> (i128, i128) {
        let m = y.max(0);
        (
            pow2_raw(y - m, frac, P_FRAC, P_MAX) as i128,
            pow2_raw(-m, frac, P_FRAC, P_MAX) as i128,
        )
    }

    /// `value * num / den` placed at the output precision; `value` has `frac` bits.
    fn scaled_ratio(&self, value: i128, frac: i32, num: i128, den: i128) -> i64 {
        let shift = self.out_frac() - frac;
        let q = if shift >= 0 {
            div_rne((value * num) << shift, den)
        } else {
            div_rne(value * num, den << -shift)
        };
        self.out_fmt.saturate_wide(q)
    }

    /// `2^(x * log2 e) - 1` in U1.15 terms (non-positive `x` only).
    fn expm1_neg(&self, x: i64) -> i128 {
        let frac = self.in_fmt.frac_bits() + P_FRAC;
        pow2_raw(x * LOG2E_Q15, frac, P_FRAC, P_MAX) as i128 - (1 << P_FRAC)
    }

    fn apply(&self, x: i64) -> i64 {
        match self.kind {
            ActivationKind::Relu => requantize(x.max(0), self.in_fmt, self.out_fmt),
            ActivationKind::LeakyRelu => {
                if x > 0 {
                    requantize(x, self.in_fmt, self.out_fmt)
                } else {
                    self.emit(x as i128 * self.slope, self.in_frac() + CONST_FRAC as i32)
                }
            }
            ActivationKind::Gelu => {
                let xp = (x << 1) + (x >> 1) - (x >> 4);
                let (e_i, e_ref) = Self::stabilized_pair(xp, self.in_fmt.frac_bits());
                self.scaled_ratio(x as i128, self.in_frac(), e_i, e_i + e_ref)
            }
            ActivationKind::Sigmoid => {
                let y = x * LOG2E_Q15;
                let (e_i, e_ref) = Self::stabilized_pair(y, self.in_fmt.frac_bits() + P_FRAC);
                self.scaled_ratio(1, 0, e_i, e_i + e_ref)
            }
            ActivationKind::Tanh => {
                // tanh(x) = 2 sigmoid(2x) - 1 = (e_i - e_ref) / (e_i + e_ref)
                let y = 2 * x * LOG2E_Q15;
                let (e_i, e_ref) = Self::stabilized_pair(y, self.in_fmt.frac_bits() + P_FRAC);
                self.scaled_ratio(1, 0, e_i - e_ref, e_i + e_ref)
            }
            ActivationKind::Elu => {
                if x > 0 {
                    requantize(x, self.in_fmt, self.out_fmt)
                } else {
                    self.emit(self.elu_alpha * self.expm1_neg(x), (P_FRAC + CONST_FRAC) as i32)
                }
            }
            ActivationKind::Selu => {
                if x > 0 {
                    self.emit(self.selu_lambda * x as i128, self.in_frac() + CONST_FRAC as i32)
                } else {
                    let v = self.selu_lambda * self.selu_alpha * self.expm1_neg(x);
                    self.emit(v, (P_FRAC + 2 * CONST_FRAC) as i32)
                }
            }
        }
    }
}
