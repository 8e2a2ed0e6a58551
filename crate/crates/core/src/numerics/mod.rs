//! Dense arrays, differentiable primitives, the Adam optimizer and a
//! finite-difference gradient checker.

mod array;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod real;

pub use array::{gemm, DenseArray, MatMut, MatRef};
pub use gradcheck::{check_primitives, grad_check, GradCheckReport};
pub use optim::{adam_step, Adam, AdamConfig};
pub use params::{ParamGroup, ParamId, ParamStore};
pub use real::{Precision, Real};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("log of non-positive value {value} at index {index}")]
    NonPositiveLog { index: usize, value: f64 },
    #[error("row index {index} out of range for table with {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("softmax row has every entry masked")]
    FullyMasked,
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
}
