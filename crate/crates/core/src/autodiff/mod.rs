//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Parameters live outside the tape as [`Tensor`]s with a gradient buffer.
//! Each forward pass records onto a fresh [`Tape`]; after
//! [`Tape::backward`], [`Tape::accumulate_into`] adds the gradients into
//! the parameters. Callers zero gradients between steps.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, DEFAULT_STEP};
pub use tape::{ElementwiseOp, Pooling, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;

pub(crate) use tape::check_dropout_rate;

#[cfg(test)]
mod tests;
