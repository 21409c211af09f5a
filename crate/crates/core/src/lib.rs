pub mod embedding;
pub mod error;
mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod stream;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
