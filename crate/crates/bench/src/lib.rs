//! Fixtures shared by the benchmarks.

use cosmo_core::metrics::evaluate;
use cosmo_core::model::{gather_inputs, ArchDescriptor, CosmoModel, PageInputs, Stores, Variant};
use cosmo_core::nn::EncoderConfig;
use cosmo_core::stream::{BookLabels, PageLabel};
use cosmo_core::synth::{generate, SynthConfig, SynthCorpus};

pub fn corpus(n_books: usize, d: usize) -> SynthCorpus {
    generate(&SynthConfig {
        n_books,
        d_vis: d,
        d_text: d,
        ..SynthConfig::default()
    })
    .expect("valid synth config")
}

/// A model of width `d_model` (projection width equal) plus the inputs of
/// the corpus' first book.
pub fn model_and_book(variant: Variant, d_model: usize, layers: usize, corpus: &SynthCorpus) -> (CosmoModel, PageInputs) {
    let d = corpus.vis.dim();
    let mut arch = ArchDescriptor::new(variant, d, d);
    arch.d_proj = d_model;
    arch.encoder = EncoderConfig {
        layers,
        heads: 4,
        d_model,
        d_ff: 4 * d_model,
        dropout: 0.4,
    };
    let model = CosmoModel::new(arch, 1).expect("valid arch");
    let stores = Stores {
        vis: Some(corpus.vis.clone()),
        text: Some(corpus.text.clone()),
    };
    let inputs = gather_inputs(&model, &corpus.streams[0], &stores).expect("synth keys resolve");
    (model, inputs)
}

/// Gold labels plus a corrupted copy (every 7th page relabeled).
pub fn gold_and_noisy(corpus: &SynthCorpus) -> (Vec<BookLabels>, Vec<BookLabels>) {
    let gold: Vec<BookLabels> = corpus
        .streams
        .iter()
        .map(|s| BookLabels::from_stream(s).expect("labeled"))
        .collect();
    let mut pred = gold.clone();
    for b in &mut pred {
        for (k, l) in b.labels.iter_mut().enumerate() {
            if k % 7 == 3 {
                *l = PageLabel::from_id((l.id() + 1) % 5).unwrap();
            }
        }
    }
    evaluate(&gold, &pred).expect("aligned books");
    (gold, pred)
}
