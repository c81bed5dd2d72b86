//! Tensors, reverse-mode differentiation and deterministic random streams.

mod element;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use element::Element;
pub use gradcheck::finite_diff_check;
pub use rng::{domain, Rng};
pub use tape::{gelu_scalar, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
