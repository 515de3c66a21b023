use lesionbench_core::detect::*;
use lesionbench_core::metrics::topk_weighted_accuracy;
use proptest::prelude::*;

fn scored_box() -> impl Strategy<Value = ScoredBox> {
    let per_class = prop::collection::vec(0u8..=10, 1..=10)
        .prop_map(|v| ScoredBox::per_class(0, 0, 8, 8, v.iter().map(|&s| s as f64 / 10.0).collect()).unwrap());
    let best = (0usize..10, 0u8..=10).prop_map(|(c, s)| ScoredBox::best(1, 1, 9, 9, c, s as f64 / 10.0).unwrap());
    prop_oneof![per_class, best]
}

fn detection_set() -> impl Strategy<Value = DetectionSet> {
    prop::collection::vec(scored_box(), 0..=20).prop_map(|boxes| DetectionSet {
        sample_id: "s".into(),
        boxes,
    })
}

fn brute_force(set: &DetectionSet) -> DetectionOutcome {
    let mut pairs = Vec::new();
    for (m, b) in set.boxes.iter().enumerate() {
        for (n, s) in b.scores.pairs() {
            pairs.push((s, m, n));
        }
    }
    let Some(max) = pairs.iter().map(|p| p.0).reduce(f64::max) else {
        return DetectionOutcome::NoDetection;
    };
    let &(confidence, box_index, class_id) = pairs
        .iter()
        .filter(|p| p.0 == max)
        .min_by_key(|p| (p.1, p.2))
        .unwrap();
    DetectionOutcome::Detected { class_id, confidence, box_index }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn argmax_matches_exhaustive_maximum(set in detection_set()) {
        prop_assert_eq!(box_argmax_classify(&set), brute_force(&set));
    }

    #[test]
    fn raising_threshold_never_adds_boxes(set in detection_set(), a in 0u8..10, b in 0u8..10) {
        let (lo, hi) = (a.min(b) as f64 / 10.0, a.max(b) as f64 / 10.0);
        let kept = |t: f64| set.boxes.iter().filter(|x| x.confidence() >= t).count();
        prop_assert!(kept(hi) <= kept(lo));
    }

    #[test]
    fn accuracy_is_micro_accuracy(
        pairs in prop::collection::vec((prop::option::of(0usize..5), 0usize..5), 1..60)
    ) {
        let (predicted, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let acc = detection_accuracy(&predicted, &labels, 5).unwrap();
        let eval = outcomes_as_evaluation(&predicted, &labels, 5).unwrap();
        prop_assert_eq!(acc.overall, topk_weighted_accuracy(&eval, 1).unwrap());
        prop_assert!((acc.weighted - acc.overall).abs() < 1e-12);
    }
}
