//! Dense tensor math with hand-written reverse-mode gradients.
//!
//! Everything runs in plain `f64` with sequential accumulation order, so
//! results are bitwise reproducible across runs. The op set is fixed
//! (matmul, add, GELU, layernorm, softmax, embedding gather, cross-entropy)
//! with a paired backward for each op instead of a general tape; the
//! network architecture that uses them never changes shape at runtime.

mod adam;
mod gradcheck;
pub mod ops;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use tensor::{Parameter, Tensor};

use thiserror::Error;

/// Errors raised by tensor ops and the optimizer.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected a {expected}-d tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("cross-entropy: every row is masked, loss is undefined")]
    AllRowsMasked,
    #[error("cross-entropy: target {target} out of range for vocab {vocab} (row {row})")]
    TargetOutOfRange {
        row: usize,
        target: usize,
        vocab: usize,
    },
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGrad { name: String },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
