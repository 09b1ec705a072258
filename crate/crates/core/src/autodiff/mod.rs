//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod check;
mod conv;
mod tape;
mod tensor;

pub use check::{grad_check, max_relative_error, relative_error};
pub use tape::{Elementwise, Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;
