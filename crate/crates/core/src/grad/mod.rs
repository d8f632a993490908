//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use tape::{BatchStats, Gradients, Primitive, Reduce, Tape, Var};
pub use tensor::Tensor;
