//! Matrix multiplication on an INT4 multiply-accumulate base unit.

mod fp8;
mod gemm;
mod int4;

pub use fp8::{fp8_decode, fp8_encode, fp8_mac, Fp8Format, Fp8Value};
pub use gemm::{matmul_accumulate, matmul_fixed, matmul_ref, Accumulator, MacMode, MacUnitConfig, FP8_TILE};
pub use int4::{mac_int4, mul_int16_via_int4, mul_int4, mul_int8_via_int4, Nibble};
