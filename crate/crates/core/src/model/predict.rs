use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::{CosmoModel, PageInputs};
use crate::stream::{PageLabel, PageStream};
use crate::tensor::{Scalar, Tensor};

/// Embedding stores for the two modalities.
#[derive(Clone, Debug, Default)]
pub struct Stores {
    pub vis: Option<EmbeddingMatrix>,
    pub text: Option<EmbeddingMatrix>,
}

/// Looks up the embedding rows the model's variant needs for every page.
pub fn gather_inputs<T: Scalar>(model: &CosmoModel<T>, stream: &PageStream, stores: &Stores) -> Result<PageInputs<T>> {
    let variant = model.variant();
    let gather = |store: Option<&EmbeddingMatrix>, key_of: fn(&crate::stream::Page) -> Option<&String>, name: &str, dim: usize| {
        let store = store.ok_or_else(|| Error::MissingModality(format!("{variant} variant needs a {name} embedding store")))?;
        if store.dim() != dim {
            return Err(Error::shape(format!("{name} store has dim {}, model expects {dim}", store.dim())));
        }
        let mut data = Vec::with_capacity(stream.len() * dim);
        for page in &stream.pages {
            let page_err = |reason: String| Error::Page {
                book_id: stream.book_id.clone(),
                page_id: page.page_id.clone(),
                reason,
            };
            let key = key_of(page).ok_or_else(|| page_err(format!("no {name} embedding key")))?;
            let row = store.lookup(key).map_err(|e| page_err(e.to_string()))?;
            data.extend(row.iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(stream.len(), dim, data)
    };
    let vis = if variant.uses_vision() {
        Some(gather(stores.vis.as_ref(), |p| p.vis_key.as_ref(), "vision", model.arch.d_vis)?)
    } else {
        None
    };
    let text = if variant.uses_text() {
        Some(gather(stores.text.as_ref(), |p| p.text_key.as_ref(), "text", model.arch.d_text)?)
    } else {
        None
    };
    Ok(PageInputs { vis, text })
}

/// Eval-mode logits for one book (`pages × 5`).
pub fn predict_logits<T: Scalar>(model: &CosmoModel<T>, stream: &PageStream, stores: &Stores) -> Result<Tensor<T>> {
    stream.validate()?;
    model.logits(&gather_inputs(model, stream, stores)?)
}

/// Row-wise argmax; ties go to the lower class id.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Vec<PageLabel> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            PageLabel::from_id(best).expect("five logits per page")
        })
        .collect()
}

pub fn predict_labels<T: Scalar>(model: &CosmoModel<T>, stream: &PageStream, stores: &Stores) -> Result<Vec<PageLabel>> {
    Ok(argmax_labels(&predict_logits(model, stream, stores)?))
}
