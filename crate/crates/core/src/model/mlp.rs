use crate::error::Result;
use crate::nn::{
    dropout, gelu, gelu_backward, join, l2_normalize_rows, l2_normalize_rows_backward, DropoutMask,
    LayerNorm, LayerNormCache, Linear, Module, Rng,
};
use crate::tensor::{Scalar, Tensor};

/// One MLP stage: `Linear`, then optionally `GELU → Dropout → LayerNorm`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpStage<T: Scalar = f32> {
    pub linear: Linear<T>,
    /// Present on hidden stages; a plain linear stage has none.
    pub norm: Option<LayerNorm<T>>,
}

/// Stack of [`MlpStage`]s with an optional row-wise L2 normalization of
/// the final output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    pub stages: Vec<MlpStage<T>>,
    pub dropout: f64,
    pub normalize_output: bool,
}

#[derive(Clone, Debug)]
struct StageCache<T: Scalar> {
    input: Tensor<T>,
    pre_act: Tensor<T>,
    mask: DropoutMask,
    norm: Option<LayerNormCache<T>>,
}

#[derive(Clone, Debug)]
pub struct MlpCache<T: Scalar> {
    stages: Vec<StageCache<T>>,
    l2: Option<(Tensor<T>, Vec<f64>)>,
}

impl<T: Scalar> Mlp<T> {
    /// `widths = [in, h1, ..., out]`. The first `activated` stages get
    /// GELU/Dropout/LayerNorm, the rest are plain linear maps.
    pub fn new(widths: &[usize], activated: usize, dropout: f64, normalize_output: bool, rng: &mut Rng) -> Self {
        let stages = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| MlpStage {
                linear: Linear::new(w[0], w[1], rng),
                norm: (i < activated).then(|| LayerNorm::new(w[1])),
            })
            .collect();
        Mlp {
            stages,
            dropout,
            normalize_output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.stages[0].linear.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.stages.last().unwrap().linear.out_dim()
    }

    pub fn forward(&self, x: &Tensor<T>, mut rng: Option<&mut Rng>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let pre_act = stage.linear.forward(&h)?;
            let (out, mask, norm) = match &stage.norm {
                Some(ln) => {
                    let (d, mask) = dropout(&gelu(&pre_act), self.dropout, rng.as_deref_mut())?;
                    let (y, c) = ln.forward(&d)?;
                    (y, mask, Some(c))
                }
                None => (pre_act.clone(), DropoutMask::identity(), None),
            };
            caches.push(StageCache {
                input: std::mem::replace(&mut h, out),
                pre_act,
                mask,
                norm,
            });
        }
        let l2 = if self.normalize_output {
            let (y, norms) = l2_normalize_rows(&h);
            h = y.clone();
            Some((y, norms))
        } else {
            None
        };
        Ok((h, MlpCache { stages: caches, l2 }))
    }

    pub fn backward(&self, cache: &MlpCache<T>, dy: &Tensor<T>, grad: &mut Self) -> Result<Tensor<T>> {
        let mut d = match &cache.l2 {
            Some((y, norms)) => l2_normalize_rows_backward(y, norms, dy),
            None => dy.clone(),
        };
        for ((stage, sc), sg) in self
            .stages
            .iter()
            .zip(&cache.stages)
            .zip(grad.stages.iter_mut())
            .rev()
        {
            if let (Some(ln), Some(lc), Some(lg)) = (&stage.norm, &sc.norm, sg.norm.as_mut()) {
                let dd = ln.backward(lc, &d, lg)?;
                d = gelu_backward(&sc.pre_act, &sc.mask.apply(&dd))?;
            }
            d = stage.linear.backward(&sc.input, &d, &mut sg.linear)?;
        }
        Ok(d)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &i.to_string());
            s.linear.visit(&join(&p, "linear"), f);
            if let Some(ln) = &s.norm {
                ln.visit(&join(&p, "norm"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &i.to_string());
            s.linear.visit_mut(&join(&p, "linear"), f);
            if let Some(ln) = &mut s.norm {
                ln.visit_mut(&join(&p, "norm"), f);
            }
        }
    }
}
