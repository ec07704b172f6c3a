//! Dense `f64` arrays with reverse-mode gradients, plus the Gamma-family
//! special functions used by the variational objective.

mod gradcheck;
pub mod special;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{check_gradients, check_gradients_multi, relative_error, GradCheckReport};
pub use special::{
    digamma, gamma_cdf, gamma_ln_pdf, gamma_quantile, lgamma, regularized_lower_gamma, regularized_upper_gamma, trigamma,
};
pub use tape::{Gradients, Tape, Var, GATHER_ZERO};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{func} is undefined at {value}")]
    Domain { func: &'static str, value: f64 },
}
