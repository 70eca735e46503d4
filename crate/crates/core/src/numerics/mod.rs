//! Dense tensor arithmetic, numerically stable log-space operations, and a
//! reverse-mode differentiation tape.
//!
//! Everything is 64-bit: the lattice dynamic programs and the gradient checks
//! need the headroom, and at desk scale speed is a non-issue. Log-zero is
//! represented as negative infinity with guarded arithmetic, never as a large
//! negative constant.

mod check;
pub(crate) mod kernels;
mod logmath;
mod tape;
mod tensor;

pub use check::{finite_diff, grad, max_rel_err};
pub use logmath::{log_add, log_softmax, log_sum_exp, LOG_ZERO};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::{Parameter, Tensor};
