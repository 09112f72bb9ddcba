//! Stochastic heavy-ball iterative regularization for linear ill-posed systems.
//!
//! A system `A_i x = y_i`, `i = 1..p`, is solved by picking one equation
//! uniformly at random per step and applying a momentum-augmented
//! row-action update. [`shb`] holds the Hilbert-space method and its SGD
//! special case, [`banach`] the dual variant with a strongly convex
//! regularizer, and [`harness`] the Monte Carlo machinery used to check
//! the method against its a-priori error bounds.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banach;
pub mod error;
pub mod experiments;
pub mod harness;
pub mod iteration;
pub mod linops;
pub mod problems;
pub mod shb;

pub use error::{Error, Result};
