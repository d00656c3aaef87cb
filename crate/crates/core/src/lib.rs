pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{DataError, Error, Result, TensorError};
pub use tensor::Tensor;
