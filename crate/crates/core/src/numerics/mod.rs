//! Dense `f64` tensors, reverse-mode differentiation with a stop-gradient
//! operator, and seeded random streams.

mod kernels;
mod ops;
pub mod rng;
mod tape;
mod tensor;

pub use rng::{rng_standard_normal, rng_uniform01, Rng, RngState, Stream};
pub use tape::{backward, corrupt_backward, CorruptionGuard, Gradients, Tape, Unary};
pub use tensor::Tensor;
