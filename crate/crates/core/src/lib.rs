//! Fixed-point Transformer operator kernels.
//!
//! * [`qcore`]: Q-formats, quantization, the shared base-2 exponential.
//! * [`kernels`]: softmax, layer norm and activations with real references.
//! * [`matmul`]: INT4-composed integer and FP8 matrix multiply.
//! * [`oracle`]: error metrics and the format sweep engine.
//! * [`pipeline`]: a small encoder layer with a per-step operator trace.

pub mod cli;
pub mod counter;
mod error;
pub mod kernels;
pub mod matmul;
pub mod oracle;
pub mod pipeline;
pub mod qcore;

pub use error::{Error, Result};
