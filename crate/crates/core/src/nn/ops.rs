use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{join, Module, Rng};
use crate::tensor::{Scalar, Tensor};

/// Cubic coefficient of the tanh approximation of GELU.
pub const GELU_COEFF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        let t = (SQRT_2_OVER_PI * (v + GELU_COEFF * v * v * v)).tanh();
        0.5 * v * (1.0 + t)
    })
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(dy, |v, g| {
        let inner = SQRT_2_OVER_PI * (v + GELU_COEFF * v * v * v);
        let t = inner.tanh();
        let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * v * v);
        g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
    })
}

/// Row-wise softmax with the max subtracted and sums taken at `f64`.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let mut buf = vec![0.0f64; x.cols()];
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (b, v) in buf.iter_mut().zip(row) {
            *b = (v.to_f64() - max).exp();
            sum += *b;
        }
        for (o, b) in out.row_mut(r).iter_mut().zip(&buf) {
            *o = T::from_f64(b / sum);
        }
    }
    out
}

/// Given `p = softmax(s)` and `dp`, returns `ds = p ⊙ (dp − Σ dp⊙p)`.
pub fn softmax_rows_backward<T: Scalar>(p: &Tensor<T>, dp: &Tensor<T>) -> Tensor<T> {
    let mut ds = Tensor::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let (pr, dr) = (p.row(r), dp.row(r));
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        for ((o, a), b) in ds.row_mut(r).iter_mut().zip(pr).zip(dr) {
            *o = T::from_f64(a.to_f64() * (b.to_f64() - inner));
        }
    }
    ds
}

/// Per-element keep factors drawn at train time; `None` means identity.
#[derive(Clone, Debug, Default)]
pub struct DropoutMask {
    scale: Option<Vec<f32>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask { scale: None }
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        match &self.scale {
            None => x.clone(),
            Some(s) => {
                let mut out = x.clone();
                for (v, &k) in out.data_mut().iter_mut().zip(s) {
                    *v = T::from_f64(v.to_f64() * k as f64);
                }
                out
            }
        }
    }
}

/// Inverted dropout. With `rng == None` (eval mode) this is the identity.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: Option<&mut Rng>,
) -> Result<(Tensor<T>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let Some(rng) = rng else {
        return Ok((x.clone(), DropoutMask::identity()));
    };
    if rate == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep = (1.0 / (1.0 - rate)) as f32;
    let scale: Vec<f32> = (0..x.data().len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = DropoutMask { scale: Some(scale) };
    Ok((mask.apply(x), mask))
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T: Scalar = f32> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T: Scalar> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::filled(1, dim, T::ONE),
            bias: Tensor::zeros(1, dim),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.cols()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        if x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "layer norm over {} columns, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let d = x.cols() as f64;
        let mut xhat = Tensor::zeros(x.rows(), x.cols());
        let mut y = Tensor::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / d;
            let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for c in 0..x.cols() {
                let h = (row[c].to_f64() - mean) * is;
                xhat.set(r, c, T::from_f64(h));
                let out = h * self.gain.data()[c].to_f64() + self.bias.data()[c].to_f64();
                y.set(r, c, T::from_f64(out));
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        dy: &Tensor<T>,
        grad: &mut Self,
    ) -> Result<Tensor<T>> {
        let (rows, cols) = cache.xhat.shape();
        if dy.shape() != (rows, cols) {
            return Err(Error::shape("layer norm backward".to_string()));
        }
        let d = cols as f64;
        let mut dx = Tensor::zeros(rows, cols);
        let mut dg = vec![0.0f64; cols];
        let mut db = vec![0.0f64; cols];
        let mut dxhat = vec![0.0f64; cols];
        for r in 0..rows {
            let (xh, g) = (cache.xhat.row(r), dy.row(r));
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for c in 0..cols {
                let gv = g[c].to_f64();
                let h = xh[c].to_f64();
                dg[c] += gv * h;
                db[c] += gv;
                dxhat[c] = gv * self.gain.data()[c].to_f64();
                mean_d += dxhat[c];
                mean_dx += dxhat[c] * h;
            }
            mean_d /= d;
            mean_dx /= d;
            let is = cache.inv_std[r];
            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = T::from_f64(is * (dxhat[c] - mean_d - xh[c].to_f64() * mean_dx));
            }
        }
        for (t, v) in grad.gain.data_mut().iter_mut().zip(dg) {
            *t = T::from_f64(t.to_f64() + v);
        }
        for (t, v) in grad.bias.data_mut().iter_mut().zip(db) {
            *t = T::from_f64(t.to_f64() + v);
        }
        Ok(dx)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Functional layer norm with explicit affine parameters.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let ln = LayerNorm {
        gain: gain.clone(),
        bias: bias.clone(),
        eps,
    };
    Ok(ln.forward(x)?.0)
}

/// Scales each row to unit Euclidean norm. Returns the output and the
/// original row norms.
pub fn l2_normalize_rows<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = x.row(r).iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt().max(1e-12);
        norms.push(n);
        for v in out.row_mut(r) {
            *v = T::from_f64(v.to_f64() / n);
        }
    }
    (out, norms)
}

/// `dx = (dy − y·(y·dy)) / ‖x‖` per row.
pub fn l2_normalize_rows_backward<T: Scalar>(y: &Tensor<T>, norms: &[f64], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), dy.row(r));
        let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        for ((o, a), b) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = T::from_f64((b.to_f64() - a.to_f64() * proj) / norms[r]);
        }
    }
    dx
}
