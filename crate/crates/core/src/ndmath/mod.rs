//! Dense arrays, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_sigmoid, sigmoid, softplus, Tensor};

