//! Dense tensors, a define-by-run reverse-mode tape and the softmax/entropy
//! primitives the losses are built from.

pub mod functional;
mod scalar;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
