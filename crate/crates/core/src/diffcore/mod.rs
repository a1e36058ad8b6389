//! Reverse-mode automatic differentiation over a small fixed set of
//! primitives, plus composite gyrovector operations built from them.

mod gradcheck;
pub mod gyro;
mod tape;
mod tensor;

pub use gradcheck::{check_gradient, check_tape, numeric_gradient, relative_error, GradCheckReport, REL_FLOOR};
pub use tape::{Axis, Gradients, Reduce, Tape, Var, NORM_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: [usize; 2], right: [usize; 2] },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("non-finite intermediate at node {node}")]
    NonFinite { node: usize },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("no input named {0:?} on this tape")]
    UnknownInput(String),
    #[error("{0} of an empty tensor")]
    Empty(&'static str),
    #[error("slice {start}..{} out of range for extent {extent}", start + len)]
    SliceOutOfRange { start: usize, len: usize, extent: usize },
    #[error("function returned a non-finite value")]
    NonFiniteFunction,
}
