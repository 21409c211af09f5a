use crate::error::{Error, Result};
use crate::nn::{join, xavier_uniform, Module, Rng};
use crate::tensor::{matmul, matmul_acc, Op, Scalar, Tensor};

/// `y = x·W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: xavier_uniform(in_dim, out_dim, rng),
            bias: Tensor::zeros(1, out_dim),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape(format!(
                "bias {:?} for weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects {} input columns, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut y = matmul(x, Op::N, &self.weight, Op::N)?;
        y.add_row_broadcast(self.bias.data())?;
        Ok(y)
    }

    /// Accumulates `dW = xᵀ·dy`, `db = Σ dy` into `grad`; returns `dy·Wᵀ`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Self) -> Result<Tensor<T>> {
        matmul_acc(&mut grad.weight, x, Op::T, dy, Op::N)?;
        for (g, s) in grad.bias.data_mut().iter_mut().zip(dy.sum_rows()) {
            *g = T::from_f64(g.to_f64() + s);
        }
        matmul(dy, Op::N, &self.weight, Op::T)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nn::testutil::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let eye = Tensor::<f64>::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let lin = Linear::from_parts(eye, Tensor::zeros(1, 3)).unwrap();
        let x = random(4, 3, 1);
        assert_eq!(lin.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_computed_product() {
        // [1,2] · [[1,0,2],[0,1,-1]] + [0.5,0,0] = [1.5, 2, 0]
        let w = Tensor::<f64>::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.5, 0.0, 0.0]]).unwrap();
        let lin = Linear::from_parts(w, b).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().data(), &[1.5, 2.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = Rng::seed_from_u64(0);
        let lin = Linear::<f32>::new(4, 2, &mut rng);
        assert!(lin.forward(&Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn sum_gradient_wrt_weight_is_column_broadcast_of_input() {
        let mut rng = Rng::seed_from_u64(3);
        let lin = Linear::<f64>::new(2, 3, &mut rng);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut g = lin.zeros_like();
        lin.backward(&x, &Tensor::filled(1, 3, 1.0), &mut g).unwrap();
        for c in 0..3 {
            assert_eq!(g.weight.get(0, c), 1.0);
            assert_eq!(g.weight.get(1, c), 2.0);
        }
        let num = numeric_grad(&lin.weight, 1e-3, |w| {
            let l = Linear::from_parts(w.clone(), lin.bias.clone()).unwrap();
            l.forward(&x).unwrap().data().iter().sum()
        });
        assert!(rel_err(&num, &g.weight) < 1e-8);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(9);
        let lin = Linear::<f64>::new(5, 4, &mut rng);
        let x = random(3, 5, 2);
        let p = probe(3, 4);
        let mut g = lin.zeros_like();
        let dx = lin.backward(&x, &p, &mut g).unwrap();
        let num_x = numeric_grad(&x, 1e-3, |x| dot(&lin.forward(x).unwrap(), &p));
        assert!(rel_err(&num_x, &dx) < 1e-4);
        let num_b = numeric_grad(&lin.bias, 1e-3, |b| {
            let l = Linear::from_parts(lin.weight.clone(), b.clone()).unwrap();
            dot(&l.forward(&x).unwrap(), &p)
        });
        assert!(rel_err(&num_b, &g.bias) < 1e-4);
    }
}
