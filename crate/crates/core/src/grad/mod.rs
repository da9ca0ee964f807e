//! Dense-matrix math with reverse-mode automatic differentiation.
//!
//! Everything the learners need is built from a small fixed set of primitives
//! recorded on a define-by-run [`Tape`]: matmul, transpose, add, scalar scale,
//! row-wise softmax, relu, tanh, slice, column-wise flatten, squared error and
//! cross-entropy. Training runs in `f32`; the finite-difference oracles in the
//! test suite instantiate the same code at `f64`, which is why the module is
//! generic over [`Scalar`].

mod check;
mod matrix;
mod tape;

pub use check::{compare_gradients, fd_gradients, grad_check, GradCheckReport, ParamCheck};
pub use matrix::{mm_nn, mm_nt, mm_tn, Matrix};
pub use tape::{Activation, GradientMap, NodeId, ParamId, Tape};

use std::fmt::{Debug, Display};

/// Element type for all forward/backward arithmetic.
pub trait Scalar:
    num_traits::Float + Send + Sync + Debug + Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Errors from tape construction and differentiation.
#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error("shape mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("slice {row_start}..{row_end} x {col_start}..{col_end} out of bounds for {rows}x{cols} matrix")]
    SliceOutOfBounds {
        row_start: usize,
        row_end: usize,
        col_start: usize,
        col_end: usize,
        rows: usize,
        cols: usize,
    },
    #[error("backward root must be a 1x1 scalar node, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("{op} expects a scalar (1x1) node, got {rows}x{cols}")]
    NonScalarNode {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("invalid one-hot target: {0}")]
    InvalidOneHot(String),
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadDataLength { rows: usize, cols: usize, len: usize },
    #[error("no gradient recorded for parameter {0}")]
    MissingGradient(usize),
}
