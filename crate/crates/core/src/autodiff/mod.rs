//! Reverse-mode differentiation over the fixed primitive set the planner
//! uses, plus parameter storage, centered RMSProp and a finite-difference
//! gradient checker. All arithmetic is `f64`.

mod check;
mod optim;
mod params;
mod sparse;
mod tape;

use thiserror::Error;

pub use check::{finite_difference_check, FdReport};
pub use optim::CenteredRmsProp;
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use sparse::{CsrPattern, IndexSets};
pub use tape::{ConvShape, DirectionalEdges, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{primitive}: shape mismatch ({detail})")]
    Shape { primitive: &'static str, detail: String },
    #[error("{primitive}: reduction over an empty set (set {set})")]
    EmptyReduction { primitive: &'static str, set: usize },
    #[error("{primitive}: produced a non-finite value")]
    NonFinite { primitive: &'static str },
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("backward requires a scalar output, got length {0}")]
    NonScalarLoss(usize),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}
