//! Minimal reverse-mode differentiable array engine.
//!
//! Values are [`Tensor`]s: n-dimensional float32 arrays in row-major order.
//! Every operation computes its forward value eagerly and, when gradients
//! are enabled and an operand requires them, records a backward closure on
//! a thread-local tape. [`backward`] replays the tape in reverse, then
//! clears it; gradients accumulate on the leaf tensors until zeroed.
//!
//! Reduction-style kernels (convolutions, sums, losses, normalization
//! statistics) accumulate in f64 and round once to f32 on output, with a
//! fixed summation order, so forward values are bit-reproducible for a
//! given graph on one platform.

mod conv;
pub mod ops;
mod optim;
mod tensor;

pub use conv::{conv3d, conv3d_general, conv_transpose3d};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{backward, clear_tape, is_grad_enabled, no_grad, tape_len, Tensor};
