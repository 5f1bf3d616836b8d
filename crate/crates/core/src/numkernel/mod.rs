//! Deterministic numeric core.
//!
//! Everything is 64-bit floating point. Tensors are row-major; the
//! differentiable primitives come as explicit forward/backward pairs rather
//! than through a general autodiff tape, since the encoder and heads only
//! need a handful of them.

mod adam;
mod gradcheck;
pub mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, Parameter, Parameterized};
pub use gradcheck::{finite_diff_check, relative_error, CoordinateCheck, GradCheckOptions, GradCheckReport};
pub use ops::{layer_norm, matmul, softmax_rows};
pub use rng::SeededRng;
pub use tensor::Tensor;
