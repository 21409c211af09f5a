//! Dense layers with hand-written backward passes.
//!
//! Each layer exposes `forward`, returning its output plus whatever the
//! backward pass needs, and `backward`, which accumulates parameter
//! gradients into a same-shaped gradient instance and returns the input
//! gradient. Gradient instances are ordinary layer values (see
//! [`Module::zeros_like`]).

mod attention;
pub mod checkpoint;
mod encoder;
mod linear;
mod ops;
mod positional;

pub use attention::{Attention, AttentionCache};
pub use encoder::{Encoder, EncoderCache, EncoderConfig, EncoderLayer, EncoderLayerCache};
pub use linear::Linear;
pub use ops::{
    dropout, gelu, gelu_backward, l2_normalize_rows, l2_normalize_rows_backward, layer_norm,
    softmax_rows, softmax_rows_backward, DropoutMask, LayerNorm, LayerNormCache, GELU_COEFF,
};
pub use positional::positional_encoding;

use rand::Rng as _;

use crate::tensor::{Scalar, Tensor};

/// Random source for initialization and dropout.
pub type Rng = rand_chacha::ChaCha8Rng;

/// A set of named parameter tensors.
pub trait Module<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.data().len());
        n
    }

    fn zero(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill(T::ZERO));
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.is_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Xavier/Glorot uniform initialization for a `fan_in × fan_out` matrix.
pub fn xavier_uniform<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound))
}
