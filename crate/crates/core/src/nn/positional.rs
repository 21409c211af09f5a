use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Sinusoidal absolute position table:
/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(n_positions: usize, d_model: usize) -> Result<Tensor<T>> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs a positive even width, got {d_model}"
        )));
    }
    Ok(Tensor::from_fn(n_positions, d_model, |p, c| {
        let i2 = (c - c % 2) as f64;
        let angle = p as f64 / 10000f64.powf(i2 / d_model as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}
