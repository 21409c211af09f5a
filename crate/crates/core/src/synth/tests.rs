use proptest::prelude::*;

use super::*;
use crate::metrics::{doc_f1_sq_pq, match_segments, mndd};
use crate::stream::{decode_segments, encode_labels, Segment, SegmentCategory};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        n_books: 6,
        min_pages: 8,
        max_pages: 20,
        d_vis: 8,
        d_text: 6,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn default_mixture_sums_to_one() {
    let m = default_mixture();
    assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((m[PageLabel::Story.id()] - 0.71 / 0.998).abs() < 1e-12);
    SynthConfig::default().validate().unwrap();
}

#[test]
fn fixed_seed_is_bit_identical() {
    let a = generate(&small(3)).unwrap();
    let b = generate(&small(3)).unwrap();
    assert_eq!(a.streams, b.streams);
    assert_eq!(a.vis.encode(), b.vis.encode());
    assert_eq!(a.text.encode(), b.text.encode());
    let c = generate(&small(4)).unwrap();
    assert_ne!(a.vis.encode(), c.vis.encode());
}

#[test]
fn books_do_not_depend_on_corpus_size() {
    let a = generate(&small(5)).unwrap();
    let b = generate(&SynthConfig { n_books: 2, ..small(5) }).unwrap();
    assert_eq!(a.streams[..2], b.streams[..]);
}

#[test]
fn books_are_valid_and_open_with_a_cover() {
    let c = generate(&small(1)).unwrap();
    for s in &c.streams {
        s.validate().unwrap();
        assert!((8..=20).contains(&s.len()));
        let labels = s.gold_labels().unwrap();
        assert_eq!(labels[0], PageLabel::Cover);
        for (k, w) in labels.windows(2).enumerate() {
            // Story pages never follow a non-story page.
            if w[1] == PageLabel::Story {
                assert!(matches!(w[0], PageLabel::Story | PageLabel::FirstPage), "page {}", k + 1);
            }
        }
        for p in &s.pages {
            c.vis.lookup(p.vis_key.as_ref().unwrap()).unwrap();
            c.text.lookup(p.text_key.as_ref().unwrap()).unwrap();
        }
    }
}

#[test]
fn class_frequencies_match_the_mixture() {
    let cfg = SynthConfig {
        n_books: 240,
        min_pages: 36,
        max_pages: 48,
        d_vis: 5,
        d_text: 5,
        ..SynthConfig::default()
    };
    let c = generate(&cfg).unwrap();
    let mut counts = [0usize; NUM_CLASSES];
    let mut total = 0;
    for s in &c.streams {
        for l in s.gold_labels().unwrap() {
            counts[l.id()] += 1;
            total += 1;
        }
    }
    assert!(total >= 10_000, "{total}");
    for k in 0..NUM_CLASSES {
        let f = counts[k] as f64 / total as f64;
        assert!((f - cfg.mixture[k]).abs() < 0.02, "class {k}: {f} vs {}", cfg.mixture[k]);
    }
}

fn nearest_mean_accuracy(cfg: &SynthConfig) -> f64 {
    let c = generate(cfg).unwrap();
    let (vis_means, text_means) = class_means(cfg);
    let nearest = |x: &[f32], means: &[Vec<f64>]| {
        (0..NUM_CLASSES)
            .min_by(|&a, &b| {
                let d = |m: &Vec<f64>| x.iter().zip(m).map(|(x, m)| (*x as f64 - m).powi(2)).sum::<f64>();
                d(&means[a]).total_cmp(&d(&means[b]))
            })
            .unwrap()
    };
    let (mut ok, mut n) = (0, 0);
    for s in &c.streams {
        for p in &s.pages {
            let y = p.gold_label.unwrap().id();
            ok += (nearest(c.vis.lookup(p.vis_key.as_ref().unwrap()).unwrap(), &vis_means) == y) as usize;
            ok += (nearest(c.text.lookup(p.text_key.as_ref().unwrap()).unwrap(), &text_means) == y) as usize;
            n += 2;
        }
    }
    ok as f64 / n as f64
}

#[test]
fn ten_sigma_is_separable_by_nearest_mean() {
    let cfg = SynthConfig {
        separation: 10.0,
        n_books: 30,
        ..SynthConfig::default()
    };
    let acc = nearest_mean_accuracy(&cfg);
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn means_are_orthonormal() {
    let (v, t) = class_means(&SynthConfig::default());
    for means in [&v, &t] {
        for a in 0..NUM_CLASSES {
            for b in 0..NUM_CLASSES {
                let dot: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn split_signal_hides_classes_per_modality() {
    let cfg = SynthConfig {
        signal: Signal::TextFirstPageOnly,
        ..SynthConfig::default()
    };
    let (v, t) = class_means(&cfg);
    let (first, story) = (PageLabel::FirstPage.id(), PageLabel::Story.id());
    assert_eq!(v[first], v[story]);
    assert_ne!(v[story], v[PageLabel::Cover.id()]);
    assert_ne!(t[first], t[story]);
    for c in [0, 1, 2, 3] {
        assert_eq!(t[c], t[0]);
    }
}

#[test]
fn invalid_configs() {
    let base = SynthConfig::default();
    for bad in [
        SynthConfig { min_pages: 0, ..base.clone() },
        SynthConfig { min_pages: 10, max_pages: 9, ..base.clone() },
        SynthConfig { separation: 0.0, ..base.clone() },
        SynthConfig { mixture: [0.5; 5], ..base.clone() },
        SynthConfig { mixture: [0.0, 0.0, 1.0, 0.0, 0.0], ..base.clone() },
        SynthConfig { d_vis: 4, ..base.clone() },
        SynthConfig { n_books: 0, ..base.clone() },
    ] {
        assert!(generate(&bad).is_err(), "{bad:?}");
    }
}

fn category() -> impl Strategy<Value = SegmentCategory> {
    prop_oneof![
        Just(SegmentCategory::Cover),
        Just(SegmentCategory::Advertisement),
        Just(SegmentCategory::Story),
        Just(SegmentCategory::TextStory),
    ]
}

/// Random partition of `n` pages (boundaries from a bitmask).
fn partition(n: usize) -> impl Strategy<Value = Vec<Segment>> {
    (0u32..(1 << (n - 1)), prop::collection::vec(category(), n)).prop_map(move |(cuts, cats)| {
        let mut segs = Vec::new();
        let mut start = 0;
        for k in 1..=n {
            if k == n || cuts & (1 << (k - 1)) != 0 {
                segs.push(Segment::new(cats[segs.len()], start, k - 1));
                start = k;
            }
        }
        segs
    })
}

fn pair() -> impl Strategy<Value = (Vec<Segment>, Vec<Segment>)> {
    (1usize..=ORACLE_MAX_PAGES).prop_flat_map(|n| (partition(n), partition(n)))
}

proptest! {
    #[test]
    fn generated_labels_round_trip(seed in 0u64..500) {
        let c = generate(&SynthConfig { n_books: 2, ..small(seed) }).unwrap();
        for s in &c.streams {
            let labels = s.gold_labels().unwrap();
            let segs = decode_segments(&labels).unwrap();
            prop_assert_eq!(decode_segments(&encode_labels(&segs).unwrap()).unwrap(), segs);
        }
    }

    #[test]
    fn oracles_agree_with_metrics((g, p) in pair()) {
        prop_assert_eq!(match_segments(&g, &p, 0.5).unwrap(), oracle_match(&g, &p, 0.5).unwrap());
        let fast = doc_f1_sq_pq(&match_segments(&g, &p, 0.5).unwrap());
        prop_assert_eq!(fast, oracle_doc_scores(&g, &p, 0.5).unwrap());
        prop_assert_eq!(fast.pq.to_bits(), (fast.doc_f1 * fast.sq).to_bits());
        prop_assert_eq!(mndd(&g, &p).unwrap(), oracle_mndd(&g, &p).unwrap());
    }
}
