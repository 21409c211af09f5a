//! Page-level, document-level and stream-level segmentation metrics.
//!
//! * F1-Macro over the five page classes, plus accuracy and the confusion
//!   matrix.
//! * Document F1, segmentation quality (mean IoU of matched segments) and
//!   panoptic quality `PQ = DocF1 · SQ`. A gold and a predicted segment
//!   match when they share a category and their IoU exceeds the threshold
//!   (0.5). On partitions at most one partner can clear 0.5, so the
//!   matching is unique.
//! * MnDD, the number of pages that must be dragged to another group:
//!   `N − Σ_j max_i |G_i ∩ P_j|`. It ignores categories.
//!
//! Corpus-level document metrics pool TP/FP/FN and IoUs over all books
//! before dividing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{decode_segments, validate_partition, BookLabels, PageLabel, Segment, NUM_CLASSES};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Rows are gold classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: &[PageLabel], pred: &[PageLabel]) -> Result<()> {
        if gold.len() != pred.len() {
            return Err(Error::LengthMismatch(gold.len(), pred.len()));
        }
        for (g, p) in gold.iter().zip(pred) {
            self.counts[g.id()][p.id()] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.correct() as f64 / t as f64
        }
    }

    /// Per-class scores and their macro average. Classes that occur in
    /// neither gold nor predictions are left out of the average.
    pub fn class_scores(&self) -> PageScores {
        let mut per_class = [ClassScore::default(); NUM_CLASSES];
        let mut sum = 0.0;
        let mut present = 0usize;
        for c in 0..NUM_CLASSES {
            let tp = self.counts[c][c];
            let gold: u64 = self.counts[c].iter().sum();
            let pred: u64 = (0..NUM_CLASSES).map(|g| self.counts[g][c]).sum();
            let precision = ratio(tp, pred);
            let recall = ratio(tp, gold);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let is_present = gold > 0 || pred > 0;
            if is_present {
                sum += f1;
                present += 1;
            }
            per_class[c] = ClassScore {
                precision,
                recall,
                f1,
                support: gold,
                present: is_present,
            };
        }
        PageScores {
            f1_macro: if present == 0 { 0.0 } else { sum / present as f64 },
            accuracy: self.accuracy(),
            per_class,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Whether the class occurs in gold or predictions.
    pub present: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageScores {
    pub f1_macro: f64,
    pub accuracy: f64,
    pub per_class: [ClassScore; NUM_CLASSES],
}

pub fn f1_macro(gold: &[PageLabel], pred: &[PageLabel]) -> Result<PageScores> {
    if gold.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut cm = ConfusionMatrix::default();
    cm.add(gold, pred)?;
    Ok(cm.class_scores())
}

pub fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.overlap(b);
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatch {
    pub gold: usize,
    pub pred: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Sorted by gold index.
    pub matches: Vec<SegmentMatch>,
    pub unmatched_gold: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

fn check_same_pages(gold: &[Segment], pred: &[Segment]) -> Result<usize> {
    let n = validate_partition(gold)?;
    let m = validate_partition(pred)?;
    if n != m {
        return Err(Error::LengthMismatch(n, m));
    }
    Ok(n)
}

/// Calls `f(i, j)` for every pair of overlapping segments, in order.
fn for_each_overlap(gold: &[Segment], pred: &[Segment], mut f: impl FnMut(usize, usize)) {
    let (mut i, mut j) = (0, 0);
    while i < gold.len() && j < pred.len() {
        f(i, j);
        if gold[i].end < pred[j].end {
            i += 1;
        } else if pred[j].end < gold[i].end {
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
}

/// Matches gold and predicted segments of equal category with IoU strictly
/// above `iou_threshold` (which must be at least 0.5).
pub fn match_segments(gold: &[Segment], pred: &[Segment], iou_threshold: f64) -> Result<Matching> {
    if !(0.5..=1.0).contains(&iou_threshold) {
        return Err(Error::Config(format!(
            "IoU threshold {iou_threshold} outside [0.5, 1]; lower values make matching ambiguous"
        )));
    }
    check_same_pages(gold, pred)?;
    let mut gold_taken = vec![false; gold.len()];
    let mut pred_taken = vec![false; pred.len()];
    let mut matches = Vec::new();
    for_each_overlap(gold, pred, |i, j| {
        if gold[i].category != pred[j].category {
            return;
        }
        let v = iou(&gold[i], &pred[j]);
        if v > iou_threshold {
            assert!(
                !gold_taken[i] && !pred_taken[j],
                "segment matched twice above IoU {iou_threshold}"
            );
            gold_taken[i] = true;
            pred_taken[j] = true;
            matches.push(SegmentMatch { gold: i, pred: j, iou: v });
        }
    });
    Ok(Matching {
        matches,
        unmatched_gold: (0..gold.len()).filter(|&i| !gold_taken[i]).collect(),
        unmatched_pred: (0..pred.len()).filter(|&j| !pred_taken[j]).collect(),
    })
}

/// Document-level counts; add them across books to pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl DocCounts {
    pub fn from_matching(m: &Matching) -> Self {
        DocCounts {
            tp: m.matches.len() as u64,
            fp: m.unmatched_pred.len() as u64,
            fn_: m.unmatched_gold.len() as u64,
            iou_sum: m.matches.iter().map(|x| x.iou).sum(),
        }
    }

    pub fn merge(&mut self, other: &DocCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    pub fn scores(&self) -> DocScores {
        let nothing_to_find = self.tp == 0 && self.fp == 0 && self.fn_ == 0;
        let pr = |den: u64| {
            if den == 0 {
                if nothing_to_find {
                    1.0
                } else {
                    0.0
                }
            } else {
                self.tp as f64 / den as f64
            }
        };
        let doc_f1 = if nothing_to_find {
            1.0
        } else {
            2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
        };
        let sq = if self.tp > 0 {
            self.iou_sum / self.tp as f64
        } else if nothing_to_find {
            1.0
        } else {
            0.0
        };
        DocScores {
            doc_precision: pr(self.tp + self.fp),
            doc_recall: pr(self.tp + self.fn_),
            doc_f1,
            sq,
            pq: doc_f1 * sq,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocScores {
    pub doc_precision: f64,
    pub doc_recall: f64,
    pub doc_f1: f64,
    pub sq: f64,
    pub pq: f64,
}

pub fn doc_f1_sq_pq(matching: &Matching) -> DocScores {
    DocCounts::from_matching(matching).scores()
}

/// Minimum number of drag-and-drop page moves turning `pred` into `gold`.
pub fn mndd(gold: &[Segment], pred: &[Segment]) -> Result<usize> {
    let n = check_same_pages(gold, pred)?;
    let mut best = vec![0usize; pred.len()];
    for_each_overlap(gold, pred, |i, j| {
        best[j] = best[j].max(gold[i].overlap(&pred[j]));
    });
    Ok(n - best.iter().sum::<usize>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BookMndd {
    pub book_id: String,
    pub pages: usize,
    pub mndd: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub books: usize,
    pub pages: u64,
    pub f1_macro: f64,
    pub accuracy: f64,
    pub per_class_precision: [f64; NUM_CLASSES],
    pub per_class_recall: [f64; NUM_CLASSES],
    pub per_class_f1: [f64; NUM_CLASSES],
    pub doc_precision: f64,
    pub doc_recall: f64,
    pub doc_f1: f64,
    pub sq: f64,
    pub pq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub mndd_total: u64,
    /// Mean MnDD per book.
    pub mndd_mean: f64,
    pub mndd_per_book: Vec<BookMndd>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("eval report: {e}")))
    }
}

/// Scores `pred` against `gold`. Books are paired by id; pages must agree
/// in count and id order.
pub fn evaluate(gold: &[BookLabels], pred: &[BookLabels]) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::BookMismatch("no gold books".into()));
    }
    if gold.len() != pred.len() {
        let missing: Vec<&str> = gold
            .iter()
            .filter(|g| !pred.iter().any(|p| p.book_id == g.book_id))
            .chain(pred.iter().filter(|p| !gold.iter().any(|g| g.book_id == p.book_id)))
            .map(|b| b.book_id.as_str())
            .collect();
        return Err(Error::BookMismatch(format!(
            "{} gold books vs {} predicted; unpaired: {}",
            gold.len(),
            pred.len(),
            missing.join(", ")
        )));
    }
    let mut cm = ConfusionMatrix::default();
    let mut doc = DocCounts::default();
    let mut per_book = Vec::with_capacity(gold.len());
    for g in gold {
        let p = pred
            .iter()
            .find(|p| p.book_id == g.book_id)
            .ok_or_else(|| Error::BookMismatch(format!("no prediction for book {}", g.book_id)))?;
        if p.labels.len() != g.labels.len() {
            return Err(Error::BookMismatch(format!(
                "book {}: {} gold pages vs {} predicted",
                g.book_id,
                g.labels.len(),
                p.labels.len()
            )));
        }
        if let Some(k) = (0..g.page_ids.len()).find(|&k| g.page_ids[k] != p.page_ids[k]) {
            return Err(Error::BookMismatch(format!(
                "book {}: page {k} is {} in gold but {} in predictions",
                g.book_id, g.page_ids[k], p.page_ids[k]
            )));
        }
        cm.add(&g.labels, &p.labels)?;
        let gs = decode_segments(&g.labels)?;
        let ps = decode_segments(&p.labels)?;
        doc.merge(&DocCounts::from_matching(&match_segments(&gs, &ps, DEFAULT_IOU_THRESHOLD)?));
        per_book.push(BookMndd {
            book_id: g.book_id.clone(),
            pages: g.labels.len(),
            mndd: mndd(&gs, &ps)?,
        });
    }
    let page = cm.class_scores();
    let ds = doc.scores();
    let mndd_total: u64 = per_book.iter().map(|b| b.mndd as u64).sum();
    Ok(EvalReport {
        books: gold.len(),
        pages: cm.total(),
        f1_macro: page.f1_macro,
        accuracy: page.accuracy,
        per_class_precision: page.per_class.map(|c| c.precision),
        per_class_recall: page.per_class.map(|c| c.recall),
        per_class_f1: page.per_class.map(|c| c.f1),
        doc_precision: ds.doc_precision,
        doc_recall: ds.doc_recall,
        doc_f1: ds.doc_f1,
        sq: ds.sq,
        pq: ds.pq,
        tp: doc.tp,
        fp: doc.fp,
        fn_: doc.fn_,
        mndd_total,
        mndd_mean: mndd_total as f64 / gold.len() as f64,
        mndd_per_book: per_book,
        confusion: cm,
    })
}
