//! Dense and sparse `f32` matrices, a reverse-mode tape over them, and Adam.

mod adam;
mod csr;
mod dense;
mod params;
mod tape;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use csr::CsrMatrix;
pub use dense::DenseMatrix;
pub use params::{Binding, ParamId, ParamSet};
pub use tape::{log_softmax_rows, sigmoid, softmax_rows, Activation, Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    Dim {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: non-finite value at position {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl NumError {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Self::Dim { op, left, right }
    }
}
