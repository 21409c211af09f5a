//! The CoSMo page-stream classifier.
//!
//! Per-page modality vectors are projected to a shared width by
//! three-stage MLPs and L2-normalized. The resulting tokens (one per page,
//! or a vision/text pair per page for the multi-token variant) get
//! sinusoidal positions and run through a transformer encoder. A
//! three-stage MLP head turns one token per page into class logits.
//!
//! Variants:
//!
//! | variant      | tokens per page | head reads          |
//! |--------------|-----------------|---------------------|
//! | `vision`     | 1               | the vision token    |
//! | `text`       | 1               | the text token      |
//! | `fused`      | 1 (2-stage MLP over `[v; t]`) | the fused token |
//! | `multitoken` | 2 (`v_i` at 2i, `t_i` at 2i+1) | the text token |

mod mlp;
mod predict;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use mlp::{Mlp, MlpCache, MlpStage};
pub use predict::{argmax_labels, gather_inputs, predict_labels, predict_logits, Stores};

use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    join, positional_encoding, xavier_uniform, Encoder, EncoderCache, EncoderConfig, Linear, Module, Rng,
};
use crate::stream::NUM_CLASSES;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "vision")]
    VisionOnly,
    #[serde(rename = "text")]
    TextOnly,
    #[serde(rename = "multitoken")]
    MultimodalMultitoken,
    #[serde(rename = "fused")]
    MultimodalFused,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::VisionOnly,
        Variant::TextOnly,
        Variant::MultimodalMultitoken,
        Variant::MultimodalFused,
    ];

    pub fn uses_vision(self) -> bool {
        self != Variant::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != Variant::VisionOnly
    }

    pub fn tokens_per_page(self) -> usize {
        if self == Variant::MultimodalMultitoken {
            2
        } else {
            1
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VisionOnly => "vision",
            Variant::TextOnly => "text",
            Variant::MultimodalMultitoken => "multitoken",
            Variant::MultimodalFused => "fused",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (vision, text, fused, multitoken)")))
    }
}

/// Everything needed to rebuild a model's parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub variant: Variant,
    /// Input widths; 0 for an unused modality.
    pub d_vis: usize,
    pub d_text: usize,
    /// Shared projection width.
    pub d_proj: usize,
    /// Encoder width is `encoder.d_model`; when it differs from `d_proj` a
    /// linear map is inserted in front of the encoder.
    pub encoder: EncoderConfig,
    pub n_classes: usize,
    /// Longest token sequence the model accepts.
    pub max_positions: usize,
}

impl ArchDescriptor {
    pub fn new(variant: Variant, d_vis: usize, d_text: usize) -> Self {
        ArchDescriptor {
            variant,
            d_vis: if variant.uses_vision() { d_vis } else { 0 },
            d_text: if variant.uses_text() { d_text } else { 0 },
            d_proj: 768,
            encoder: EncoderConfig::default(),
            n_classes: NUM_CLASSES,
            max_positions: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let v = self.variant;
        if v.uses_vision() != (self.d_vis > 0) {
            return Err(Error::Config(format!(
                "{v} variant {} vision input, got d_vis = {}",
                if v.uses_vision() { "needs" } else { "takes no" },
                self.d_vis
            )));
        }
        if v.uses_text() != (self.d_text > 0) {
            return Err(Error::Config(format!(
                "{v} variant {} text input, got d_text = {}",
                if v.uses_text() { "needs" } else { "takes no" },
                self.d_text
            )));
        }
        if self.d_proj == 0 {
            return Err(Error::Config("d_proj must be positive".into()));
        }
        if self.n_classes != NUM_CLASSES {
            return Err(Error::Config(format!("n_classes must be {NUM_CLASSES}")));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }
}

/// Per-page modality matrices (`pages × d`) for one book.
#[derive(Clone, Debug, Default)]
pub struct PageInputs<T: Scalar = f32> {
    pub vis: Option<Tensor<T>>,
    pub text: Option<Tensor<T>>,
}

impl<T: Scalar> PageInputs<T> {
    pub fn n_pages(&self) -> usize {
        self.vis
            .as_ref()
            .or(self.text.as_ref())
            .map_or(0, Tensor::rows)
    }
}

/// All learnable weights of one model variant plus its descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct CosmoModel<T: Scalar = f32> {
    pub arch: ArchDescriptor,
    pub vis_projection: Option<Mlp<T>>,
    pub text_projection: Option<Mlp<T>>,
    pub fusion: Option<Mlp<T>>,
    /// Learned vision/text type vectors (multi-token only).
    pub modality_embedding: Option<Tensor<T>>,
    pub width_projection: Option<Linear<T>>,
    pub encoder: Encoder<T>,
    pub head: Mlp<T>,
}

/// Intermediates of one forward pass, consumed by [`CosmoModel::backward`].
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    inner: Option<TapeInner<T>>,
}

#[derive(Debug)]
struct TapeInner<T: Scalar> {
    n_pages: usize,
    vis: Option<MlpCache<T>>,
    text: Option<MlpCache<T>>,
    fusion: Option<MlpCache<T>>,
    width_input: Option<Tensor<T>>,
    encoder: EncoderCache<T>,
    head: MlpCache<T>,
}

/// Gradients with respect to the raw page inputs.
#[derive(Clone, Debug, Default)]
pub struct InputGrads<T: Scalar> {
    pub vis: Option<Tensor<T>>,
    pub text: Option<Tensor<T>>,
}

fn check_width<T: Scalar>(name: &str, t: &Tensor<T>, want: usize) -> Result<()> {
    if t.cols() != want {
        return Err(Error::shape(format!("{name} input has {} columns, expected {want}", t.cols())));
    }
    Ok(())
}

impl<T: Scalar> CosmoModel<T> {
    pub fn new(arch: ArchDescriptor, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let p = arch.d_proj;
        let drop = arch.encoder.dropout;
        let projection = |d_in: usize, rng: &mut Rng| Mlp::new(&[d_in, p, p, p], 3, drop, true, rng);
        let vis_projection = arch.variant.uses_vision().then(|| projection(arch.d_vis, &mut rng));
        let text_projection = arch.variant.uses_text().then(|| projection(arch.d_text, &mut rng));
        let fusion = (arch.variant == Variant::MultimodalFused)
            .then(|| Mlp::new(&[2 * p, p, p], 1, drop, true, &mut rng));
        let d_model = arch.encoder.d_model;
        let width_projection = (d_model != p).then(|| Linear::new(p, d_model, &mut rng));
        let modality_embedding =
            (arch.variant == Variant::MultimodalMultitoken).then(|| xavier_uniform(2, d_model, &mut rng));
        let encoder = Encoder::new(&arch.encoder, &mut rng)?;
        let head = Mlp::new(&[d_model, d_model, d_model, arch.n_classes], 2, drop, false, &mut rng);
        Ok(CosmoModel {
            arch,
            vis_projection,
            text_projection,
            fusion,
            modality_embedding,
            width_projection,
            encoder,
            head,
        })
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    /// Scale applied to unit-norm tokens so their entries are on the same
    /// scale as the position table.
    fn token_scale(&self) -> f64 {
        (self.arch.d_proj as f64).sqrt()
    }

    /// Arranges projected modality rows into the encoder input sequence:
    /// scaled tokens, optional width map, modality type vectors and
    /// positions.
    pub fn build_token_sequence(
        &self,
        vis_proj: Option<&Tensor<T>>,
        text_proj: Option<&Tensor<T>>,
        rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>> {
        let (tokens, _) = self.arrange_tokens(vis_proj, text_proj, rng)?;
        let (x, _) = self.embed_tokens(&tokens)?;
        Ok(x)
    }

    fn arrange_tokens(
        &self,
        vis_proj: Option<&Tensor<T>>,
        text_proj: Option<&Tensor<T>>,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, Option<MlpCache<T>>)> {
        let missing = |m: &str| Error::MissingModality(format!("{} variant needs {m} input", self.variant()));
        match self.variant() {
            Variant::VisionOnly => Ok((vis_proj.ok_or_else(|| missing("vision"))?.clone(), None)),
            Variant::TextOnly => Ok((text_proj.ok_or_else(|| missing("text"))?.clone(), None)),
            Variant::MultimodalFused => {
                let v = vis_proj.ok_or_else(|| missing("vision"))?;
                let t = text_proj.ok_or_else(|| missing("text"))?;
                let cat = Tensor::concat_cols(v, t)?;
                let (y, c) = self.fusion.as_ref().expect("fused model has a fusion MLP").forward(&cat, rng)?;
                Ok((y, Some(c)))
            }
            Variant::MultimodalMultitoken => {
                let v = vis_proj.ok_or_else(|| missing("vision"))?;
                let t = text_proj.ok_or_else(|| missing("text"))?;
                if v.shape() != t.shape() {
                    return Err(Error::shape(format!(
                        "vision tokens {:?} vs text tokens {:?}",
                        v.shape(),
                        t.shape()
                    )));
                }
                let mut out = Tensor::zeros(2 * v.rows(), v.cols());
                for i in 0..v.rows() {
                    out.row_mut(2 * i).copy_from_slice(v.row(i));
                    out.row_mut(2 * i + 1).copy_from_slice(t.row(i));
                }
                Ok((out, None))
            }
        }
    }

    fn embed_tokens(&self, tokens: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let n = tokens.rows();
        if n > self.arch.max_positions {
            return Err(Error::Config(format!(
                "sequence of {n} tokens exceeds max_positions {}",
                self.arch.max_positions
            )));
        }
        let scaled = tokens.scale(self.token_scale());
        let (mut x, width_input) = match &self.width_projection {
            Some(w) => (w.forward(&scaled)?, Some(scaled)),
            None => (scaled, None),
        };
        x.add_assign(&positional_encoding(n, self.arch.encoder.d_model)?)?;
        if let Some(types) = &self.modality_embedding {
            for r in 0..n {
                let ty = types.row(r % 2);
                for (v, &e) in x.row_mut(r).iter_mut().zip(ty) {
                    *v = T::from_f64(v.to_f64() + e.to_f64());
                }
            }
        }
        Ok((x, width_input))
    }

    /// Rows of the encoder output that the head reads.
    fn head_rows(&self, n_tokens: usize) -> Vec<usize> {
        match self.variant() {
            Variant::MultimodalMultitoken => (1..n_tokens).step_by(2).collect(),
            _ => (0..n_tokens).collect(),
        }
    }

    /// Encoder plus head over an already built token sequence.
    pub fn classify_tokens(&self, x: &Tensor<T>, mut rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let (h, _) = self.encoder.forward(x, rng.as_deref_mut())?;
        let sel = h.select_rows(&self.head_rows(x.rows()));
        Ok(self.head.forward(&sel, rng)?.0)
    }

    /// Full forward pass. `rng = None` runs in eval mode (no dropout).
    pub fn forward(&self, inputs: &PageInputs<T>, mut rng: Option<&mut Rng>) -> Result<(Tensor<T>, Tape<T>)> {
        let n_pages = inputs.n_pages();
        let project = |mlp: Option<&Mlp<T>>, x: Option<&Tensor<T>>, rng: Option<&mut Rng>, name: &str| {
            match (mlp, x) {
                (Some(m), Some(x)) => {
                    check_width(name, x, m.in_dim())?;
                    if x.rows() != n_pages {
                        return Err(Error::shape(format!("{name} input has {} rows, expected {n_pages}", x.rows())));
                    }
                    m.forward(x, rng).map(Some)
                }
                (Some(_), None) => Err(Error::MissingModality(format!(
                    "{} variant needs {name} input",
                    self.variant()
                ))),
                (None, _) => Ok(None),
            }
        };
        let vis = project(self.vis_projection.as_ref(), inputs.vis.as_ref(), rng.as_deref_mut(), "vision")?;
        let text = project(self.text_projection.as_ref(), inputs.text.as_ref(), rng.as_deref_mut(), "text")?;
        let (tokens, fusion) =
            self.arrange_tokens(vis.as_ref().map(|v| &v.0), text.as_ref().map(|t| &t.0), rng.as_deref_mut())?;
        let (x, width_input) = self.embed_tokens(&tokens)?;
        let (h, encoder) = self.encoder.forward(&x, rng.as_deref_mut())?;
        let sel = h.select_rows(&self.head_rows(x.rows()));
        let (logits, head) = self.head.forward(&sel, rng)?;
        let tape = TapeInner {
            n_pages,
            vis: vis.map(|v| v.1),
            text: text.map(|t| t.1),
            fusion,
            width_input,
            encoder,
            head,
        };
        Ok((logits, Tape { inner: Some(tape) }))
    }

    /// Eval-mode logits.
    pub fn logits(&self, inputs: &PageInputs<T>) -> Result<Tensor<T>> {
        Ok(self.forward(inputs, None)?.0)
    }

    /// Accumulates parameter gradients of `Σ dlogits ⊙ logits` into `grads`
    /// and returns the gradients with respect to the inputs.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &Tensor<T>, grads: &mut Self) -> Result<InputGrads<T>> {
        let tape = tape.inner.as_ref().ok_or(Error::EmptyTape)?;
        let n_tokens = tape.n_pages * self.variant().tokens_per_page();
        if dlogits.shape() != (tape.n_pages, self.arch.n_classes) {
            return Err(Error::shape(format!(
                "logit gradient {:?}, expected {}x{}",
                dlogits.shape(),
                tape.n_pages,
                self.arch.n_classes
            )));
        }
        let dsel = self.head.backward(&tape.head, dlogits, &mut grads.head)?;
        let mut dh = Tensor::zeros(n_tokens, self.arch.encoder.d_model);
        for (k, r) in self.head_rows(n_tokens).into_iter().enumerate() {
            dh.row_mut(r).copy_from_slice(dsel.row(k));
        }
        let dx = self.encoder.backward(&tape.encoder, &dh, &mut grads.encoder)?;
        if let Some(g) = grads.modality_embedding.as_mut() {
            for r in 0..n_tokens {
                for (acc, &d) in g.row_mut(r % 2).iter_mut().zip(dx.row(r)) {
                    *acc = T::from_f64(acc.to_f64() + d.to_f64());
                }
            }
        }
        let dscaled = match (&self.width_projection, &tape.width_input) {
            (Some(w), Some(inp)) => w.backward(inp, &dx, grads.width_projection.as_mut().unwrap())?,
            _ => dx,
        };
        let dtokens = dscaled.scale(self.token_scale());

        let (dvis_p, dtext_p) = match self.variant() {
            Variant::VisionOnly => (Some(dtokens), None),
            Variant::TextOnly => (None, Some(dtokens)),
            Variant::MultimodalFused => {
                let fusion = self.fusion.as_ref().unwrap();
                let dcat = fusion.backward(tape.fusion.as_ref().unwrap(), &dtokens, grads.fusion.as_mut().unwrap())?;
                let p = self.arch.d_proj;
                (Some(dcat.slice_cols(0, p)), Some(dcat.slice_cols(p, p)))
            }
            Variant::MultimodalMultitoken => {
                let even: Vec<usize> = (0..n_tokens).step_by(2).collect();
                let odd: Vec<usize> = (1..n_tokens).step_by(2).collect();
                (Some(dtokens.select_rows(&even)), Some(dtokens.select_rows(&odd)))
            }
        };
        let vis = match (&self.vis_projection, &tape.vis, dvis_p) {
            (Some(m), Some(c), Some(d)) => Some(m.backward(c, &d, grads.vis_projection.as_mut().unwrap())?),
            _ => None,
        };
        let text = match (&self.text_projection, &tape.text, dtext_p) {
            (Some(m), Some(c), Some(d)) => Some(m.backward(c, &d, grads.text_projection.as_mut().unwrap())?),
            _ => None,
        };
        Ok(InputGrads { vis, text })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_module(self.arch.to_json(), self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: ArchDescriptor = serde_json::from_str(&ck.descriptor)
            .map_err(|e| Error::Format(format!("architecture descriptor: {e}")))?;
        let mut model = Self::new(arch, 0)?;
        ck.load_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

impl<T: Scalar> Module<T> for CosmoModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        if let Some(m) = &self.vis_projection {
            m.visit(&join(prefix, "vis_projection"), f);
        }
        if let Some(m) = &self.text_projection {
            m.visit(&join(prefix, "text_projection"), f);
        }
        if let Some(m) = &self.fusion {
            m.visit(&join(prefix, "fusion"), f);
        }
        if let Some(t) = &self.modality_embedding {
            f(&join(prefix, "modality_embedding"), t);
        }
        if let Some(w) = &self.width_projection {
            w.visit(&join(prefix, "width_projection"), f);
        }
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(m) = &mut self.vis_projection {
            m.visit_mut(&join(prefix, "vis_projection"), f);
        }
        if let Some(m) = &mut self.text_projection {
            m.visit_mut(&join(prefix, "text_projection"), f);
        }
        if let Some(m) = &mut self.fusion {
            m.visit_mut(&join(prefix, "fusion"), f);
        }
        if let Some(t) = &mut self.modality_embedding {
            f(&join(prefix, "modality_embedding"), t);
        }
        if let Some(w) = &mut self.width_projection {
            w.visit_mut(&join(prefix, "width_projection"), f);
        }
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests;
