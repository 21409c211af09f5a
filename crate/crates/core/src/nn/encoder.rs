use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    dropout, gelu, gelu_backward, join, Attention, AttentionCache, DropoutMask, LayerNorm,
    LayerNormCache, Linear, Module, Rng,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            heads: 4,
            d_model: 768,
            d_ff: 3072,
            dropout: 0.4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config("d_model must be even".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Pre-norm transformer block:
/// `h = x + Drop(Attn(LN₁(x)))`, `y = h + Drop(FFN(LN₂(h)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T: Scalar = f32> {
    pub attention: Attention<T>,
    pub norm_attn: LayerNorm<T>,
    pub norm_ffn: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct EncoderLayerCache<T: Scalar> {
    norm_attn: LayerNormCache<T>,
    attention: AttentionCache<T>,
    drop_attn: DropoutMask,
    norm_ffn: LayerNormCache<T>,
    ffn_input: Tensor<T>,
    pre_act: Tensor<T>,
    act: Tensor<T>,
    drop_ffn: DropoutMask,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderLayer {
            attention: Attention::new(cfg.d_model, cfg.heads, rng)?,
            norm_attn: LayerNorm::new(cfg.d_model),
            norm_ffn: LayerNorm::new(cfg.d_model),
            ffn_in: Linear::new(cfg.d_model, cfg.d_ff, rng),
            ffn_out: Linear::new(cfg.d_ff, cfg.d_model, rng),
            dropout: cfg.dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, EncoderLayerCache<T>)> {
        let (a_in, norm_attn) = self.norm_attn.forward(x)?;
        let (a_out, attention) = self.attention.forward(&a_in)?;
        let (a_drop, drop_attn) = dropout(&a_out, self.dropout, rng.as_deref_mut())?;
        let h = x.add(&a_drop)?;

        let (ffn_input, norm_ffn) = self.norm_ffn.forward(&h)?;
        let pre_act = self.ffn_in.forward(&ffn_input)?;
        let act = gelu(&pre_act);
        let f_out = self.ffn_out.forward(&act)?;
        let (f_drop, drop_ffn) = dropout(&f_out, self.dropout, rng.as_deref_mut())?;
        let y = h.add(&f_drop)?;
        Ok((
            y,
            EncoderLayerCache {
                norm_attn,
                attention,
                drop_attn,
                norm_ffn,
                ffn_input,
                pre_act,
                act,
                drop_ffn,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &EncoderLayerCache<T>,
        dy: &Tensor<T>,
        grad: &mut Self,
    ) -> Result<Tensor<T>> {
        let df_out = cache.drop_ffn.apply(dy);
        let dact = self.ffn_out.backward(&cache.act, &df_out, &mut grad.ffn_out)?;
        let dpre = gelu_backward(&cache.pre_act, &dact)?;
        let dffn_in = self.ffn_in.backward(&cache.ffn_input, &dpre, &mut grad.ffn_in)?;
        let mut dh = dy.clone();
        dh.add_assign(&self.norm_ffn.backward(&cache.norm_ffn, &dffn_in, &mut grad.norm_ffn)?)?;

        let da_out = cache.drop_attn.apply(&dh);
        let da_in = self.attention.backward(&cache.attention, &da_out, &mut grad.attention)?;
        let mut dx = dh;
        dx.add_assign(&self.norm_attn.backward(&cache.norm_attn, &da_in, &mut grad.norm_attn)?)?;
        Ok(dx)
    }
}

impl<T: Scalar> Module<T> for EncoderLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.norm_ffn.visit(&join(prefix, "norm_ffn"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm_attn.visit_mut(&join(prefix, "norm_attn"), f);
        self.norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
    }
}

/// A stack of [`EncoderLayer`]s followed by a final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T: Scalar = f32> {
    pub layers: Vec<EncoderLayer<T>>,
    pub final_norm: LayerNorm<T>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T: Scalar> {
    layers: Vec<EncoderLayerCache<T>>,
    final_norm: LayerNormCache<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer::new(cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            layers,
            final_norm: LayerNorm::new(cfg.d_model),
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, EncoderCache<T>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, rng.as_deref_mut())?;
            caches.push(cache);
            h = next;
        }
        let (y, final_norm) = self.final_norm.forward(&h)?;
        Ok((
            y,
            EncoderCache {
                layers: caches,
                final_norm,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache<T>, dy: &Tensor<T>, grad: &mut Self) -> Result<Tensor<T>> {
        let mut d = self.final_norm.backward(&cache.final_norm, dy, &mut grad.final_norm)?;
        for ((layer, lc), lg) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            d = layer.backward(lc, &d, lg)?;
        }
        Ok(d)
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.final_norm.visit(&join(prefix, "final_norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.final_norm.visit_mut(&join(prefix, "final_norm"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nn::testutil::*;

    fn toy_config() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.4,
        }
    }

    #[test]
    fn zero_output_projections_reduce_to_final_norm() {
        let mut rng = Rng::seed_from_u64(1);
        let mut enc = Encoder::<f64>::new(&toy_config(), &mut rng).unwrap();
        for l in &mut enc.layers {
            l.attention.output.zero();
            l.ffn_out.zero();
        }
        let x = random(3, 8, 2);
        let (y, _) = enc.forward(&x, Some(&mut rng)).unwrap();
        let (want, _) = enc.final_norm.forward(&x).unwrap();
        assert!(rel_err(&y, &want) < 1e-14);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = Rng::seed_from_u64(4);
        let enc = Encoder::<f32>::new(&toy_config(), &mut rng).unwrap();
        let x = random(5, 8, 9).cast::<f32>();
        let (a, _) = enc.forward(&x, None).unwrap();
        let (b, _) = enc.forward(&x, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = toy_config();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg = toy_config();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_stack_gradient_with_dropout_mask() {
        let mut rng = Rng::seed_from_u64(5);
        let enc = Encoder::<f64>::new(&toy_config(), &mut rng).unwrap();
        let x = random(3, 8, 6);
        let p = probe(3, 8);
        let run = |enc: &Encoder<f64>, x: &Tensor<f64>| {
            let mut r = Rng::seed_from_u64(77);
            enc.forward(x, Some(&mut r)).unwrap()
        };
        let (_, cache) = run(&enc, &x);
        let mut g = enc.zeros_like();
        let dx = enc.backward(&cache, &p, &mut g).unwrap();
        let num = numeric_grad(&x, 1e-3, |x| dot(&run(&enc, x).0, &p));
        assert!(rel_err(&num, &dx) < 1e-4, "{}", rel_err(&num, &dx));

        let w = &enc.layers[0].ffn_in.weight;
        let num_w = numeric_grad(w, 1e-3, |w| {
            let mut e = enc.clone();
            e.layers[0].ffn_in.weight = w.clone();
            dot(&run(&e, &x).0, &p)
        });
        assert!(rel_err(&num_w, &g.layers[0].ffn_in.weight) < 1e-4);
    }
}
