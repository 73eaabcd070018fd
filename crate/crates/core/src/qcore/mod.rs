//! Q-format definitions, affine quantization, saturation/rounding and the
//! shared base-2 exponential.
//!
//! Rounding is round-to-nearest, ties-to-even everywhere. Formats are at
//! most 32 bits wide; raw values are carried as `i64` so that intermediate
//! arithmetic never wraps.

mod format;
mod pow2;
pub mod qten;
mod quant;
mod tensor;

pub use format::{q, QFormat, MAX_WIDTH};
pub use pow2::{pow2_fixed, LOG2E_Q15, POW2_TABLE, TABLE_BITS, TABLE_FRAC};
pub use quant::{dequantize, quantize, quantize_checked, requantize, QuantParams};
pub use tensor::{FixedTensor, RealTensor};

pub(crate) use pow2::pow2_raw;
pub(crate) use quant::{div_rne, rshift_rne, shift_round};
