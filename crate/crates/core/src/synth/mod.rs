//! Synthetic comic-book corpora with class-conditional Gaussian page
//! embeddings, plus exhaustive oracles for the segmentation metrics.
//!
//! Each book opens with a Cover page followed by a shuffled sequence of
//! Story (FirstPage-led), Advertisement, TextStory and Cover segments whose
//! expected page shares equal the configured mixture.

mod oracle;

pub use oracle::{oracle_doc_scores, oracle_match, oracle_mndd, ORACLE_MAX_PAGES};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::stream::{Page, PageLabel, PageStream, NUM_CLASSES};

/// Which modality carries which class signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Both modalities separate all five classes.
    #[default]
    Full,
    /// Text only separates FirstPage from everything else; vision separates
    /// everything except FirstPage from Story.
    TextFirstPageOnly,
}

impl std::str::FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Signal::Full),
            "text_first_page_only" => Ok(Signal::TextFirstPageOnly),
            _ => Err(Error::Config(format!("unknown signal mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_books: usize,
    pub min_pages: usize,
    pub max_pages: usize,
    /// Page shares indexed by class id: Cover, Advertisement, Story,
    /// TextStory, FirstPage.
    pub mixture: [f64; NUM_CLASSES],
    pub d_vis: usize,
    pub d_text: usize,
    /// Distance between class means in units of the per-dimension noise σ.
    pub separation: f64,
    pub seed: u64,
    pub signal: Signal,
}

/// Published page shares in percent (Cover, Advertisement, Story,
/// TextStory, FirstPage). They add up to 99.8, so [`default_mixture`]
/// rescales them to sum to 1.
pub const PUBLISHED_SHARES: [f64; NUM_CLASSES] = [2.4, 8.8, 71.0, 4.2, 13.4];

pub fn default_mixture() -> [f64; NUM_CLASSES] {
    let total: f64 = PUBLISHED_SHARES.iter().sum();
    PUBLISHED_SHARES.map(|p| p / total)
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_books: 40,
            min_pages: 16,
            max_pages: 48,
            mixture: default_mixture(),
            d_vis: 64,
            d_text: 64,
            separation: 6.0,
            seed: 42,
            signal: Signal::Full,
        }
    }
}

/// Probability of a run break between two consecutive pages of the same
/// class (mean run length 1.5 for ads, 2 for text stories).
const AD_BREAK: f64 = 2.0 / 3.0;
const TEXT_BREAK: f64 = 0.5;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_books == 0 {
            return bad("n_books must be positive".into());
        }
        if self.min_pages == 0 || self.min_pages > self.max_pages {
            return bad(format!("invalid page range {}..={}", self.min_pages, self.max_pages));
        }
        if self.mixture.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return bad(format!("mixture has negative or non-finite entries: {:?}", self.mixture));
        }
        let sum: f64 = self.mixture.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("mixture sums to {sum}, not 1"));
        }
        if self.mixture[PageLabel::Story.id()] > 0.0 && self.mixture[PageLabel::FirstPage.id()] == 0.0 {
            return bad("story pages need a non-zero first-page share".into());
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad(format!("separation {} must be positive", self.separation));
        }
        if self.d_vis < NUM_CLASSES || self.d_text < NUM_CLASSES {
            return bad(format!("embedding dims must be at least {NUM_CLASSES}"));
        }
        Ok(())
    }

    /// Per-dimension noise standard deviation. Unit orthonormal means sit
    /// √2 apart, so σ = √2 / separation.
    pub fn noise_sigma(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.separation
    }
}

fn draw(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Splits `n` pages of `label` into runs, breaking between neighbours
/// with probability `p_break`.
fn runs(label: PageLabel, n: usize, p_break: f64, rng: &mut Rng) -> Vec<Vec<PageLabel>> {
    let mut out: Vec<Vec<PageLabel>> = Vec::new();
    for k in 0..n {
        if k == 0 || rng.gen::<f64>() < p_break {
            out.push(Vec::new());
        }
        out.last_mut().unwrap().push(label);
    }
    out
}

/// Page labels of one book.
///
/// The opening Cover is fixed. The class of each remaining page is drawn
/// from the mixture, with the cover share reduced by the opening page, so
/// expected shares match the mixture exactly. The pages are then grouped
/// into segments (each FirstPage heads a story that receives a uniform
/// share of the Story pages) and the segments are shuffled.
pub fn sample_labels(cfg: &SynthConfig, n_pages: usize, rng: &mut Rng) -> Vec<PageLabel> {
    let mut labels = vec![PageLabel::Cover];
    if n_pages == 1 {
        return labels;
    }
    let n = n_pages as f64;
    let mut body = cfg.mixture.map(|m| m * n / (n - 1.0));
    body[PageLabel::Cover.id()] = ((cfg.mixture[PageLabel::Cover.id()] * n - 1.0) / (n - 1.0)).max(0.0);
    let mut counts = [0usize; NUM_CLASSES];
    for _ in 1..n_pages {
        counts[draw(&body, rng)] += 1;
    }
    let (story, first) = (PageLabel::Story.id(), PageLabel::FirstPage.id());
    if counts[story] > 0 && counts[first] == 0 {
        counts[story] -= 1;
        counts[first] = 1;
    }
    let mut segments: Vec<Vec<PageLabel>> = vec![vec![PageLabel::FirstPage]; counts[first]];
    for _ in 0..counts[story] {
        let k = rng.gen_range(0..segments.len());
        segments[k].push(PageLabel::Story);
    }
    segments.extend(std::iter::repeat(vec![PageLabel::Cover]).take(counts[PageLabel::Cover.id()]));
    segments.extend(runs(PageLabel::Advertisement, counts[PageLabel::Advertisement.id()], AD_BREAK, rng));
    segments.extend(runs(PageLabel::TextStory, counts[PageLabel::TextStory.id()], TEXT_BREAK, rng));
    segments.shuffle(rng);
    labels.extend(segments.into_iter().flatten());
    labels
}

/// `k` orthonormal vectors in `d` dimensions (Gram–Schmidt on Gaussians).
fn orthonormal(k: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Unit-norm class means for both modalities, indexed by class id.
pub fn class_means(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let vis = orthonormal(NUM_CLASSES, cfg.d_vis, &mut rng);
    let text = orthonormal(NUM_CLASSES, cfg.d_text, &mut rng);
    match cfg.signal {
        Signal::Full => (vis, text),
        Signal::TextFirstPageOnly => {
            let first = PageLabel::FirstPage.id();
            let vis = (0..NUM_CLASSES)
                .map(|c| if c == first { vis[PageLabel::Story.id()].clone() } else { vis[c].clone() })
                .collect();
            let text = (0..NUM_CLASSES)
                .map(|c| if c == first { text[first].clone() } else { text[0].clone() })
                .collect();
            (vis, text)
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub streams: Vec<PageStream>,
    pub vis: EmbeddingMatrix,
    pub text: EmbeddingMatrix,
}

fn noisy(mean: &[f64], noise: &Normal<f64>, rng: &mut Rng) -> Vec<f32> {
    mean.iter().map(|m| (m + noise.sample(rng)) as f32).collect()
}

/// Generates the corpus. Book `b` draws from its own ChaCha stream, so a
/// book does not depend on how many books are generated.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let (vis_means, text_means) = class_means(cfg);
    let noise = Normal::new(0.0, cfg.noise_sigma()).expect("positive sigma");
    let mut vis = EmbeddingMatrix::new(cfg.d_vis)?;
    let mut text = EmbeddingMatrix::new(cfg.d_text)?;
    let mut streams = Vec::with_capacity(cfg.n_books);
    for b in 0..cfg.n_books {
        let mut rng = Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64);
        let n_pages = rng.gen_range(cfg.min_pages..=cfg.max_pages);
        let labels = sample_labels(cfg, n_pages, &mut rng);
        let book_id = format!("book{b:04}");
        let mut pages = Vec::with_capacity(n_pages);
        for (k, &label) in labels.iter().enumerate() {
            let page_id = format!("p{k:03}");
            let key = format!("{book_id}/{page_id}");
            vis.push(key.clone(), &noisy(&vis_means[label.id()], &noise, &mut rng))?;
            text.push(key.clone(), &noisy(&text_means[label.id()], &noise, &mut rng))?;
            pages.push(Page {
                page_id,
                index: k,
                vis_key: Some(key.clone()),
                text_key: Some(key),
                gold_label: Some(label),
            });
        }
        streams.push(PageStream { book_id, pages });
    }
    Ok(SynthCorpus { streams, vis, text })
}

#[cfg(test)]
mod tests;
