//! Brute-force reference implementations of the segment metrics. They
//! work on page bitmasks and enumerate candidates exhaustively, sharing no
//! code with the interval sweeps in [`crate::metrics`].

use crate::error::{Error, Result};
use crate::metrics::{DocScores, Matching, SegmentMatch};
use crate::stream::Segment;

pub const ORACLE_MAX_PAGES: usize = 12;

fn masks(segments: &[Segment]) -> Result<(Vec<u16>, usize)> {
    let mut covered = 0u32;
    let mut out = Vec::with_capacity(segments.len());
    for s in segments {
        if s.end >= ORACLE_MAX_PAGES {
            return Err(Error::OracleCap(s.end + 1, ORACLE_MAX_PAGES));
        }
        let m = (s.start..=s.end).fold(0u16, |m, k| m | (1 << k));
        if covered & m as u32 != 0 {
            return Err(Error::InvalidPartition("segments overlap".into()));
        }
        covered |= m as u32;
        out.push(m);
    }
    let n = covered.count_ones() as usize;
    if covered != (1u32 << n) - 1 {
        return Err(Error::InvalidPartition("segments do not tile a prefix of pages".into()));
    }
    Ok((out, n))
}

fn check(gold: &[Segment], pred: &[Segment]) -> Result<(Vec<u16>, Vec<u16>, usize)> {
    let (g, n) = masks(gold)?;
    let (p, m) = masks(pred)?;
    if n != m {
        return Err(Error::LengthMismatch(n, m));
    }
    Ok((g, p, n))
}

fn mask_iou(a: u16, b: u16) -> f64 {
    (a & b).count_ones() as f64 / (a | b).count_ones() as f64
}

/// Best matching over every one-to-one assignment of same-category pairs
/// with IoU above `iou_threshold`: most pairs first, then largest IoU sum.
pub fn oracle_match(gold: &[Segment], pred: &[Segment], iou_threshold: f64) -> Result<Matching> {
    let (g, p, _) = check(gold, pred)?;
    let eligible = |i: usize, j: usize| gold[i].category == pred[j].category && mask_iou(g[i], p[j]) > iou_threshold;

    fn search(
        i: usize,
        n_gold: usize,
        n_pred: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        best: &mut (usize, f64, Vec<(usize, usize)>),
        eligible: &dyn Fn(usize, usize) -> bool,
        score: &dyn Fn(&[(usize, usize)]) -> f64,
    ) {
        if i == n_gold {
            let s = score(current);
            if current.len() > best.0 || (current.len() == best.0 && s > best.1) {
                *best = (current.len(), s, current.clone());
            }
            return;
        }
        search(i + 1, n_gold, n_pred, used, current, best, eligible, score);
        for j in 0..n_pred {
            if !used[j] && eligible(i, j) {
                used[j] = true;
                current.push((i, j));
                search(i + 1, n_gold, n_pred, used, current, best, eligible, score);
                current.pop();
                used[j] = false;
            }
        }
    }

    let score = |pairs: &[(usize, usize)]| pairs.iter().map(|&(i, j)| mask_iou(g[i], p[j])).sum::<f64>();
    let mut best = (0, f64::NEG_INFINITY, Vec::new());
    search(0, g.len(), p.len(), &mut vec![false; p.len()], &mut Vec::new(), &mut best, &eligible, &score);
    let pairs = best.2;
    Ok(Matching {
        matches: pairs
            .iter()
            .map(|&(i, j)| SegmentMatch {
                gold: i,
                pred: j,
                iou: mask_iou(g[i], p[j]),
            })
            .collect(),
        unmatched_gold: (0..g.len()).filter(|i| !pairs.iter().any(|x| x.0 == *i)).collect(),
        unmatched_pred: (0..p.len()).filter(|j| !pairs.iter().any(|x| x.1 == *j)).collect(),
    })
}

/// Document scores straight from the oracle matching.
pub fn oracle_doc_scores(gold: &[Segment], pred: &[Segment], iou_threshold: f64) -> Result<DocScores> {
    let m = oracle_match(gold, pred, iou_threshold)?;
    let tp = m.matches.len() as f64;
    let (n_gold, n_pred) = (gold.len() as f64, pred.len() as f64);
    let ious: f64 = m.matches.iter().map(|x| x.iou).sum();
    let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
    // Both partitions cover at least one page, so n_gold + n_pred > 0.
    let doc_f1 = 2.0 * tp / (n_gold + n_pred);
    let sq = if tp == 0.0 { 0.0 } else { ious / tp };
    Ok(DocScores {
        doc_precision: ratio(tp, n_pred),
        doc_recall: ratio(tp, n_gold),
        doc_f1,
        sq,
        pq: doc_f1 * sq,
    })
}

/// Fewest pages that must move when every predicted segment keeps the
/// pages it shares with one gold segment of its choosing. Tries every
/// (predicted, gold) pair; the choices are independent across predicted
/// segments, so the per-segment optimum is the global one.
pub fn oracle_mndd(gold: &[Segment], pred: &[Segment]) -> Result<usize> {
    let (g, p, n) = check(gold, pred)?;
    let kept: usize = p
        .iter()
        .map(|&pm| g.iter().map(|&gm| (gm & pm).count_ones() as usize).max().unwrap_or(0))
        .sum();
    Ok(n - kept)
}
