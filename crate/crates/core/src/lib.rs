pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod data;
pub mod rng;
pub mod model;
pub mod train;
pub mod analysis;
pub mod harness;
