use lesionbench_core::metrics::*;
use proptest::prelude::*;

fn batch_strategy() -> impl Strategy<Value = EvaluationBatch> {
    (2usize..=10, 1usize..=50).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..=20, c), n),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(raw, labels)| {
                // Small integer grid so ties are common.
                let probs = raw
                    .into_iter()
                    .map(|row| {
                        let s: f64 = row.iter().map(|&v| v as f64).sum::<f64>() + c as f64;
                        row.iter().map(|&v| (v as f64 + 1.0) / s).collect()
                    })
                    .collect();
                EvaluationBatch::new(probs, labels, c).unwrap()
            })
    })
}

fn brute_topk(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn micro(batch: &EvaluationBatch, k: usize) -> f64 {
    let hits = batch
        .probs
        .iter()
        .zip(&batch.labels)
        .filter(|(row, y)| brute_topk(row, k).contains(y))
        .count();
    hits as f64 / batch.len() as f64
}

fn permuted(batch: &EvaluationBatch, seed: u64) -> EvaluationBatch {
    let n = batch.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut s = seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        order.swap(i, (s >> 33) as usize % (i + 1));
    }
    EvaluationBatch::new(
        order.iter().map(|&i| batch.probs[i].clone()).collect(),
        order.iter().map(|&i| batch.labels[i]).collect(),
        batch.num_classes,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn topk_set_matches_full_sort(batch in batch_strategy(), k in 1usize..=10) {
        let k = k.min(batch.num_classes);
        for row in &batch.probs {
            prop_assert_eq!(topk_set(row, k).unwrap(), brute_topk(row, k));
        }
    }

    #[test]
    fn weighted_accuracy_is_micro_accuracy(batch in batch_strategy()) {
        for k in 1..=batch.num_classes {
            prop_assert_eq!(topk_weighted_accuracy(&batch, k).unwrap(), micro(&batch, k));
        }
    }

    #[test]
    fn monotone_in_k(batch in batch_strategy()) {
        let accs: Vec<f64> = (1..=batch.num_classes)
            .map(|k| topk_weighted_accuracy(&batch, k).unwrap())
            .collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*accs.last().unwrap(), 1.0);
    }

    #[test]
    fn literal_formula_is_direct_double_sum(batch in batch_strategy(), k in 1usize..=10) {
        let k = k.min(batch.num_classes);
        let n = batch.len();
        let mut expected = 0.0;
        for i in 0..n {
            if brute_topk(&batch.probs[i], k).contains(&batch.labels[i]) {
                let mut w = 0.0;
                for j in 0..n {
                    if batch.labels[j] == batch.labels[i] {
                        w += 1.0 / n as f64;
                    }
                }
                expected += w;
            }
        }
        prop_assert!((literal_eq2(&batch, k).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn report_is_consistent(batch in batch_strategy()) {
        let report = evaluate(&batch, &[1, 2]).unwrap();
        let counts = batch.class_counts();
        prop_assert_eq!(report.confusion.total(), batch.len() as u64);
        prop_assert_eq!(
            report.confusion.row_sums(),
            counts.iter().map(|&c| c as u64).collect::<Vec<_>>()
        );
        for s in &report.topk {
            let recomposed: f64 = counts
                .iter()
                .zip(&s.per_class)
                .map(|(&nc, acc)| nc as f64 / batch.len() as f64 * acc.unwrap_or(0.0))
                .sum();
            prop_assert!((recomposed - s.weighted).abs() < 1e-12);
            prop_assert!(s.per_class.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn joint_shuffle_changes_nothing(batch in batch_strategy(), seed in any::<u64>()) {
        let shuffled = permuted(&batch, seed);
        for k in 1..=batch.num_classes.min(3) {
            prop_assert_eq!(
                topk_weighted_accuracy(&batch, k).unwrap(),
                topk_weighted_accuracy(&shuffled, k).unwrap()
            );
            prop_assert_eq!(
                per_class_accuracy(&batch, k).unwrap(),
                per_class_accuracy(&shuffled, k).unwrap()
            );
            prop_assert!((literal_eq2(&batch, k).unwrap() - literal_eq2(&shuffled, k).unwrap()).abs() < 1e-12);
        }
        prop_assert_eq!(evaluate(&batch, &[1]).unwrap().confusion, evaluate(&shuffled, &[1]).unwrap().confusion);
    }
}
