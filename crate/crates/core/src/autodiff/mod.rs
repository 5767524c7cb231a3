//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference
//! gradient checker.

mod adam;
mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, within_tolerance, GradCheckReport, GradMismatch, ABS_FLOOR, FD_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value {value} at flat index {index}")]
    NonFinite { op: &'static str, index: usize, value: f64 },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,
    #[error("invariant violated: {0}")]
    Invariant(String),
}
