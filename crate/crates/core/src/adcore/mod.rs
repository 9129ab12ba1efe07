//! Dense-matrix reverse-mode automatic differentiation.
//!
//! A [`Tape`] records operations on [`Matrix`] values as they are
//! evaluated. Calling [`Tape::backward`] on a scalar node sweeps the tape in
//! reverse and leaves an adjoint on every node that feeds the root.
//!
//! ```
//! use perfrec::adcore::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::row_vector(&[1.0, 2.0]));
//! let sq = tape.hadamard(x, x).unwrap();
//! let f = tape.total_sum(sq).unwrap();
//! tape.backward(f).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{dot, l2, Matrix};
pub use tape::{NodeId, OpKind, Tape, EXP2_MAX_EXPONENT};
