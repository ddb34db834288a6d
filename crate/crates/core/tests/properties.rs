use std::collections::BTreeSet;

use proptest::prelude::*;
use tama_core::aggregate::{accumulate_detections, VoteWeighting};
use tama_core::metrics::{auc_roc, point_adjust, PaMode};
use tama_core::respparse::normalize_label;
use tama_core::synthgen::{generate, AnomalySpec, GeneratorConfig};
use tama_core::{interval_length, interval_overlap, labels_to_intervals, AnomalyInterval, AnomalyType, Confidence, Detection};

fn interval(max: usize) -> impl Strategy<Value = AnomalyInterval> {
    (0..max, 0..max).prop_map(|(a, b)| AnomalyInterval::spanning(a, b))
}

fn detection(max: usize) -> impl Strategy<Value = Detection> {
    (interval(max), 1u8..=4, 0usize..4)
        .prop_map(|(iv, c, k)| Detection::new(iv, Confidence::new(c).unwrap(), AnomalyType::ALL[k]))
}

/// Sorted disjoint runs from a flag vector.
fn runs(flags: &[bool]) -> Vec<AnomalyInterval> {
    labels_to_intervals(&tama_core::LabelSeries::new(flags.to_vec()))
}

proptest! {
    #[test]
    fn overlap_is_symmetric_and_bounded(a in interval(1000), b in interval(1000)) {
        let ab = interval_overlap(a, b);
        prop_assert_eq!(ab, interval_overlap(b, a));
        prop_assert!(ab <= interval_length(a).min(interval_length(b)));
    }

    #[test]
    fn pa_is_nested_in_alpha(
        flags in proptest::collection::vec(any::<bool>(), 1..200),
        pred_flags in proptest::collection::vec(any::<bool>(), 200),
        a1 in 0.0f64..=1.0,
        a2 in 0.0f64..=1.0,
    ) {
        let truth = runs(&flags);
        let pred: BTreeSet<usize> = (0..flags.len()).filter(|&t| pred_flags[t]).collect();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let full = point_adjust(&truth, &pred, 0.0).unwrap();
        let mid = point_adjust(&truth, &pred, lo).unwrap();
        let tight = point_adjust(&truth, &pred, hi).unwrap();
        prop_assert!(mid.is_subset(&full));
        prop_assert!(tight.is_subset(&mid));
        prop_assert_eq!(point_adjust(&truth, &pred, 1.0).unwrap(), pred);
    }

    #[test]
    fn raw_roc_is_the_tie_averaged_pairwise_statistic(
        flags in proptest::collection::vec(any::<bool>(), 2..150),
        raw_scores in proptest::collection::vec(0u8..6, 150),
    ) {
        let n = flags.len();
        let scores: Vec<f64> = raw_scores[..n].iter().map(|&s| s as f64).collect();
        let pos: Vec<f64> = (0..n).filter(|&t| flags[t]).map(|t| scores[t]).collect();
        let neg: Vec<f64> = (0..n).filter(|&t| !flags[t]).map(|t| scores[t]).collect();
        prop_assume!(!pos.is_empty() && !neg.is_empty());
        // twice the Mann-Whitney count: 2 per win, 1 per tie
        let doubled: usize = pos
            .iter()
            .map(|p| neg.iter().map(|q| if p > q { 2 } else if p == q { 1 } else { 0 }).sum::<usize>())
            .sum();
        let expected = doubled as f64 / (2 * pos.len() * neg.len()) as f64;
        let got = auc_roc(&scores, &runs(&flags), PaMode::Raw).unwrap();
        prop_assert!((got - expected).abs() < 1e-12, "{} vs {}", got, expected);
    }

    #[test]
    fn accumulation_is_additive_and_order_free(
        a in proptest::collection::vec(detection(300), 0..25),
        b in proptest::collection::vec(detection(300), 0..25),
        count_votes in any::<bool>(),
    ) {
        let w = if count_votes { VoteWeighting::Count } else { VoteWeighting::Confidence };
        let n = 300;
        let (ca, _) = accumulate_detections(&a, n, w);
        let (cb, _) = accumulate_detections(&b, n, w);
        let both: Vec<Detection> = a.iter().chain(&b).cloned().collect();
        let (cab, yab) = accumulate_detections(&both, n, w);
        let summed: Vec<u32> = ca.values().iter().zip(cb.values()).map(|(x, y)| x + y).collect();
        prop_assert_eq!(cab.values(), &summed[..]);
        let reversed: Vec<Detection> = both.iter().rev().cloned().collect();
        let (crev, yrev) = accumulate_detections(&reversed, n, w);
        prop_assert_eq!(crev, cab);
        prop_assert_eq!(yrev, yab);
    }

    #[test]
    fn synthetic_labels_are_the_injection_union(seed in any::<u64>(), starts in proptest::collection::btree_set(0usize..40, 1..5)) {
        // injections on a coarse grid of 25-point slots so they never overlap
        let kinds = [AnomalyType::Point, AnomalyType::Seasonal, AnomalyType::Trend];
        let injections: Vec<AnomalySpec> = starts
            .iter()
            .enumerate()
            .map(|(i, &slot)| {
                let kind = kinds[i % 3];
                let s = slot * 25;
                let interval = if kind == AnomalyType::Point {
                    AnomalyInterval::point(s)
                } else {
                    AnomalyInterval::new(s, s + 19).unwrap()
                };
                AnomalySpec { kind, interval, magnitude: 2.0 }
            })
            .collect();
        let cfg = GeneratorConfig { length: 1000, base_period: 50, noise_sigma: 0.1, seed, injections: injections.clone() };
        let a = generate("s", &cfg).unwrap();
        prop_assert_eq!(&a, &generate("s", &cfg).unwrap());
        let mut union = vec![false; 1000];
        for spec in &injections {
            union[spec.interval.start()..=spec.interval.end()].fill(true);
        }
        prop_assert_eq!(a.labels.flags(), &union[..]);
    }
}

#[test]
fn canonical_labels_are_fixed_points() {
    for k in AnomalyType::ALL {
        let once = normalize_label(k.as_str()).unwrap();
        assert_eq!(once, k);
        assert_eq!(normalize_label(once.as_str()).unwrap(), once);
    }
}
