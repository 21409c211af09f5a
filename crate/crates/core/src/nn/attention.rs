use crate::error::{Error, Result};
use crate::nn::{join, softmax_rows, softmax_rows_backward, Linear, Module, Rng};
use crate::tensor::{matmul, Op, Scalar, Tensor};

/// Unmasked multi-head scaled dot-product self-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T: Scalar = f32> {
    pub num_heads: usize,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T: Scalar> {
    x: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<Tensor<T>>,
    heads: Tensor<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn new(d_model: usize, num_heads: usize, rng: &mut Rng) -> Result<Self> {
        if num_heads == 0 || d_model % num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {num_heads} heads"
            )));
        }
        Ok(Attention {
            num_heads,
            query: Linear::new(d_model, d_model, rng),
            key: Linear::new(d_model, d_model, rng),
            value: Linear::new(d_model, d_model, rng),
            output: Linear::new(d_model, d_model, rng),
        })
    }

    pub fn d_model(&self) -> usize {
        self.query.in_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.num_heads
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, AttentionCache<T>)> {
        if x.cols() != self.d_model() {
            return Err(Error::shape(format!(
                "attention over width {}, got {}",
                self.d_model(),
                x.cols()
            )));
        }
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Tensor::zeros(x.rows(), self.d_model());
        let mut probs = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let (qh, kh, vh) = (q.slice_cols(h * dh, dh), k.slice_cols(h * dh, dh), v.slice_cols(h * dh, dh));
            let scores = matmul(&qh, Op::N, &kh, Op::T)?.scale(scale);
            let p = softmax_rows(&scores);
            heads.set_cols(h * dh, &matmul(&p, Op::N, &vh, Op::N)?);
            probs.push(p);
        }
        let y = self.output.forward(&heads)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                heads,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &AttentionCache<T>,
        dy: &Tensor<T>,
        grad: &mut Self,
    ) -> Result<Tensor<T>> {
        let dheads = self.output.backward(&cache.heads, dy, &mut grad.output)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let n = cache.x.rows();
        let mut dq = Tensor::zeros(n, self.d_model());
        let mut dk = Tensor::zeros(n, self.d_model());
        let mut dv = Tensor::zeros(n, self.d_model());
        for h in 0..self.num_heads {
            let p = &cache.probs[h];
            let qh = cache.q.slice_cols(h * dh, dh);
            let kh = cache.k.slice_cols(h * dh, dh);
            let vh = cache.v.slice_cols(h * dh, dh);
            let dout = dheads.slice_cols(h * dh, dh);
            let dp = matmul(&dout, Op::N, &vh, Op::T)?;
            dv.set_cols(h * dh, &matmul(p, Op::T, &dout, Op::N)?);
            let ds = softmax_rows_backward(p, &dp).scale(scale);
            dq.set_cols(h * dh, &matmul(&ds, Op::N, &kh, Op::N)?);
            dk.set_cols(h * dh, &matmul(&ds, Op::T, &qh, Op::N)?);
        }
        let mut dx = self.query.backward(&cache.x, &dq, &mut grad.query)?;
        dx.add_assign(&self.key.backward(&cache.x, &dk, &mut grad.key)?)?;
        dx.add_assign(&self.value.backward(&cache.x, &dv, &mut grad.value)?)?;
        Ok(dx)
    }
}

impl<T: Scalar> Module<T> for Attention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}
