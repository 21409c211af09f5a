use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Scalar, Tensor};

/// Adam with decoupled weight decay.
///
/// `p ← p − lr · (m̂ / (√v̂ + eps) + weight_decay · p)`
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<M: Module<T>>(&mut self, params: &mut M, grads: &M) -> Result<()> {
        let grads: Vec<&Tensor<T>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::ZERO; g.data().len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != grads.len() {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);
        let mut idx = 0;
        let mut mismatch = false;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let g = grads[idx];
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            idx += 1;
            if g.data().len() != p.data().len() || m.len() != p.data().len() {
                mismatch = true;
                return;
            }
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                let mi = b1 * m.to_f64() + (1.0 - b1) * g;
                let vi = b2 * v.to_f64() + (1.0 - b2) * g * g;
                *m = T::from_f64(mi);
                *v = T::from_f64(vi);
                let pv = p.to_f64();
                let update = (mi / c1) / ((vi / c2).sqrt() + eps) + wd * pv;
                *p = T::from_f64(pv - lr * update);
            }
        });
        if mismatch || idx != grads.len() {
            return Err(Error::shape("gradient set does not match the parameter set"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Rng};
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut rng = Rng::seed_from_u64(0);
        let mut p = Linear::<f64>::new(2, 3, &mut rng);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.weight.data_mut().copy_from_slice(&[0.5, -2.0, 1e-3, -1e-3, 3.0, 0.0]);
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut p, &g).unwrap();
        for i in 0..6 {
            let gi = g.weight.data()[i];
            let delta = p.weight.data()[i] - before.weight.data()[i];
            let expect = if gi == 0.0 { 0.0 } else { -0.1 * gi.signum() };
            assert!((delta - expect).abs() < 1e-5, "{i}: {delta}");
        }
        assert_eq!(p.bias, before.bias);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut rng = Rng::seed_from_u64(1);
        let mut p = Linear::<f64>::new(2, 2, &mut rng);
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.5);
        opt.step(&mut p, &g).unwrap();
        for (a, b) in p.weight.data().iter().zip(before.weight.data()) {
            assert!((a - b * 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut rng = Rng::seed_from_u64(2);
        let mut p = Linear::<f32>::new(3, 3, &mut rng);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.weight.fill(1.0);
        let mut opt = AdamW::new(0.0, 0.9, 0.999, 1e-8, 0.01);
        for _ in 0..3 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // f(w) = ½‖w − 1‖²
        let mut rng = Rng::seed_from_u64(3);
        let mut p = Linear::<f64>::new(2, 2, &mut rng);
        let mut opt = AdamW::new(0.05, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.weight = p.weight.map(|w| w - 1.0);
            g.bias = p.bias.map(|b| b - 1.0);
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.weight.data().iter().chain(p.bias.data()).all(|w| (w - 1.0).abs() < 1e-3));
    }
}
