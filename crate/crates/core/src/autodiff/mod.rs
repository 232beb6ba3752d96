//! Dense `f64` tensors with a reverse-mode tape.

mod gradcheck;
pub(crate) mod ops;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use ops::LAYER_NORM_EPS;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
