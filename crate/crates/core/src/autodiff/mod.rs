//! Differentiation engine.
//!
//! Spatial derivatives of the network come from forward-mode dual numbers;
//! the whole dual computation is recorded on a reverse-mode [`Tape`] so the
//! loss (which depends on those derivatives) can be differentiated with
//! respect to the parameters in one backward sweep.

mod dual;
mod grad;
mod params;
mod tape;

pub use dual::DualScalar;
pub use grad::{column, grad_params, grad_params_chunked, ChunkedGradient, ParamVars};
pub use params::{ParamBlock, ParamLayout, ParamVector};
pub use tape::{BinaryOp, Gradients, Tape, UnaryOp, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: String, left: (usize, usize), right: (usize, usize) },
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("non-finite gradient {value} for parameter `{parameter}` (flat index {index})")]
    NonFiniteGradient { parameter: String, index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter layout: {0}")]
    Layout(String),
}
