//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records a fixed vocabulary of primitive ops (add, multiply, matmul, concat,
//! column slice, tanh, sigmoid, exp, log, row softmax, row/element gather, row expansion,
//! sum, constant scaling and smooth-L1) as they are evaluated. [`Tape::backward`] walks the
//! record in reverse from a scalar loss. Everything else is composed from these ops.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(2.0));
//! let y = tape.param(Tensor::scalar(3.0));
//! let xy = tape.mul(x, y).unwrap();
//! let grads = tape.backward(xy).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 3.0);
//! assert_eq!(grads.get(y).unwrap().item(), 2.0);
//! ```

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_with_floor, roundoff_floor, GradCheck, LOSS_ULPS};
pub use tape::{smooth_l1, Axis, Gradients, Tape, TapeError, Var};
pub use tensor::Tensor;
