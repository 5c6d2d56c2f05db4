//! Dense tensors with reverse-mode differentiation over a recorded tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_gradient, max_relative_error};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;
