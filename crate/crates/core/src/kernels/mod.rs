//! Fixed-point softmax, layer normalization and activation kernels, each
//! paired with a double-precision reference.

mod activation;
mod layernorm;
mod softmax;

pub use activation::{activation_fixed, activation_raw, activation_ref, ActivationConfig, ActivationKind};
pub use layernorm::{layernorm_fixed, layernorm_fixed_rows, layernorm_ref, LayerNormConfig};
pub use softmax::{softmax_fixed, softmax_fixed_rows, softmax_ref, SoftmaxConfig, SoftmaxVariant};

pub(crate) use layernorm::layernorm_row;
pub(crate) use softmax::softmax_row;
