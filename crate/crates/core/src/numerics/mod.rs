//! Dense `f32` tensors and the small set of kernels the rest of the stack
//! is built from.

mod dense;
mod ops;
mod rng;
mod tensor;

pub use dense::{gelu, relu, sigmoid, Dense};
pub(crate) use ops::{bilinear_accumulate, gemm, softmax_slice};
pub use ops::{bilinear_sample, layernorm, matmul, softmax, BoolTensor};
pub use rng::SeededRng;
pub use tensor::Tensor;
