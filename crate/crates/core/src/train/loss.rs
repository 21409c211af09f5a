use crate::error::{Error, Result};
use crate::stream::{PageLabel, NUM_CLASSES};
use crate::tensor::{Scalar, Tensor};

/// Inverse-frequency class weights, `w_c = N / (5 · count_c)`.
///
/// Counts may be fractional (e.g. percentages). A class with count zero is
/// smoothed to count 1 so it still gets a finite weight.
pub fn class_weights_from_frequencies(counts: &[f64; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(Error::Config(format!("class counts must be finite and non-negative: {counts:?}")));
    }
    if counts.iter().all(|&c| c == 0.0) {
        return Err(Error::Config("cannot derive class weights: every class count is zero".into()));
    }
    let smoothed = counts.map(|c| if c == 0.0 { 1.0 } else { c });
    let total: f64 = smoothed.iter().sum();
    Ok(smoothed.map(|c| total / (NUM_CLASSES as f64 * c)))
}

pub fn label_counts(labels: impl IntoIterator<Item = PageLabel>) -> [f64; NUM_CLASSES] {
    let mut counts = [0.0; NUM_CLASSES];
    for l in labels {
        counts[l.id()] += 1.0;
    }
    counts
}

/// Class-weighted mean cross entropy over the rows of `logits`, and its
/// gradient with respect to the logits.
///
/// `loss = Σ_i w[y_i] · −log softmax(z_i)[y_i] / Σ_i w[y_i]`
pub fn weighted_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[PageLabel],
    weights: &[f64; NUM_CLASSES],
) -> Result<(f64, Tensor<T>)> {
    if logits.cols() != NUM_CLASSES {
        return Err(Error::shape(format!("expected {NUM_CLASSES} logits per row, got {}", logits.cols())));
    }
    if logits.rows() != labels.len() {
        return Err(Error::LengthMismatch(logits.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyStream);
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite { what: "logits".into() });
    }
    let total_weight: f64 = labels.iter().map(|l| weights[l.id()]).sum();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), NUM_CLASSES);
    for (i, label) in labels.iter().enumerate() {
        let z: Vec<f64> = logits.row(i).iter().map(|v| v.to_f64()).collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let y = label.id();
        let w = weights[y] / total_weight;
        loss += w * (log_norm - z[y]);
        let g = grad.row_mut(i);
        for c in 0..NUM_CLASSES {
            let p = (z[c] - log_norm).exp();
            let target = if c == y { 1.0 } else { 0.0 };
            g[c] = T::from_f64(w * (p - target));
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{numeric_grad, random, rel_err};
    use proptest::prelude::*;

    fn labels(ids: &[usize]) -> Vec<PageLabel> {
        ids.iter().map(|&i| PageLabel::from_id(i).unwrap()).collect()
    }

    #[test]
    fn equal_counts_give_unit_weights() {
        assert_eq!(class_weights_from_frequencies(&[10.0; 5]).unwrap(), [1.0; 5]);
    }

    #[test]
    fn published_frequencies() {
        // Cover, Advertisement, Story, Text-story, First-page (% of pages).
        let w = class_weights_from_frequencies(&[2.4, 8.8, 71.0, 4.2, 13.4]).unwrap();
        let expect = [8.33, 2.27, 0.2817, 4.76, 1.49];
        // Proportional: compare after scaling to the Story weight.
        for c in 0..5 {
            let ratio = (w[c] / w[2]) / (expect[c] / expect[2]);
            assert!((ratio - 1.0).abs() < 5e-3, "class {c}: {w:?}");
        }
    }

    #[test]
    fn dominant_class_weight() {
        let w = class_weights_from_frequencies(&[1.0, 1.0, 1.0, 1.0, 96.0]).unwrap();
        assert_eq!(w[4], 100.0 / (5.0 * 96.0));
        assert_eq!(w[0], 100.0 / 5.0);
    }

    #[test]
    fn absent_classes_are_smoothed() {
        let w = class_weights_from_frequencies(&[0.0, 0.0, 8.0, 0.0, 0.0]).unwrap();
        assert!(w.iter().all(|x| x.is_finite() && *x > 0.0));
        assert_eq!(w[0], 12.0 / 5.0);
        assert!(class_weights_from_frequencies(&[0.0; 5]).is_err());
        assert!(class_weights_from_frequencies(&[1.0, -1.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn uniform_logits_give_ln5() {
        let logits = Tensor::<f64>::zeros(4, 5);
        let (loss, _) = weighted_cross_entropy(&logits, &labels(&[0, 1, 2, 4]), &[1.0; 5]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let y = labels(&[3, 0]);
        let mut prev = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0] {
            let mut z = Tensor::<f64>::zeros(2, 5);
            z.set(0, 3, scale);
            z.set(1, 0, scale);
            let (loss, _) = weighted_cross_entropy(&z, &y, &[1.0; 5]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn nan_logits_rejected() {
        let mut z = Tensor::<f32>::zeros(1, 5);
        z.set(0, 2, f32::NAN);
        assert!(matches!(
            weighted_cross_entropy(&z, &labels(&[1]), &[1.0; 5]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn weights_scale_contributions() {
        let z = random(2, 5, 3);
        let y = labels(&[0, 1]);
        let (l0, _) = weighted_cross_entropy(&z.select_rows(&[0]), &y[..1], &[1.0; 5]).unwrap();
        let (l1, _) = weighted_cross_entropy(&z.select_rows(&[1]), &y[1..], &[1.0; 5]).unwrap();
        let (l, _) = weighted_cross_entropy(&z, &y, &[3.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((l - (3.0 * l0 + l1) / 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000, ids in prop::collection::vec(0usize..5, 1..6),
                                               w in prop::array::uniform5(0.1f64..10.0)) {
            let y = labels(&ids);
            let z = random(ids.len(), 5, seed);
            let (_, g) = weighted_cross_entropy(&z, &y, &w).unwrap();
            let num = numeric_grad(&z, 1e-5, |z| weighted_cross_entropy(z, &y, &w).unwrap().0);
            prop_assert!(rel_err(&g, &num) < 1e-6);
        }
    }
}
