//! Dense tensors, tape-based reverse-mode differentiation, the Adam
//! optimizer and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Axis, EdgeList, Tape, Var};
pub use tensor::{order_free_sum, Tensor};
