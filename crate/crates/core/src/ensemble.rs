//! Probability-sum ensembling and exhaustive member-subset search.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::metrics::{topk_set, topk_weighted_accuracy, EvaluationBatch};
use crate::pipeline::PredictionBatch;

pub const MAX_MEMBERS: usize = 20;
/// Report label for the all-members ensemble.
pub const FULL_ENSEMBLE_NAME: &str = "EnsembleNet";

/// Summed member scores. Rows are not renormalized, so they are not
/// probability distributions; orderings are all that downstream metrics use.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreBatch {
    /// Rows divided by their sums, for display.
    pub fn normalized(&self) -> Result<PredictionBatch> {
        let probs = self
            .scores
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|v| v / s).collect()
            })
            .collect();
        PredictionBatch::new(self.model_id.clone(), self.sample_ids.clone(), probs)
    }

    pub fn evaluation_batch(&self, labels: Vec<ClassId>) -> Result<EvaluationBatch> {
        let c = self.scores.first().map_or(0, Vec::len);
        EvaluationBatch::new(self.scores.clone(), labels, c)
    }
}

fn check_members(batches: &[PredictionBatch]) -> Result<()> {
    let first = batches
        .first()
        .ok_or_else(|| Error::invalid("ensemble needs at least one member"))?;
    for b in &batches[1..] {
        if b.sample_ids != first.sample_ids {
            return Err(Error::ShapeMismatch(format!(
                "member `{}` covers different samples than `{}`",
                b.model_id, first.model_id
            )));
        }
        if b.num_classes() != first.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "member `{}` has {} classes, `{}` has {}",
                b.model_id,
                b.num_classes(),
                first.model_id,
                first.num_classes()
            )));
        }
    }
    Ok(())
}

/// Elementwise sum of member probability rows. Members are accumulated in
/// model-id order, so the result is bit-identical under any member order.
pub fn ensemble_scores(batches: &[PredictionBatch]) -> Result<ScoreBatch> {
    check_members(batches)?;
    let mut order: Vec<&PredictionBatch> = batches.iter().collect();
    order.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let mut scores = order[0].probs.clone();
    for b in &order[1..] {
        for (acc, row) in scores.iter_mut().zip(&b.probs) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    Ok(ScoreBatch {
        model_id: order
            .iter()
            .map(|b| b.model_id.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        sample_ids: order[0].sample_ids.clone(),
        scores,
    })
}

/// Per-sample top-`k` labels of the summed scores.
pub fn ensemble_predict(batches: &[PredictionBatch], k: usize) -> Result<Vec<Vec<ClassId>>> {
    let summed = ensemble_scores(batches)?;
    summed.scores.iter().map(|row| topk_set(row, k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KAccuracy {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    /// Member ids in input order.
    pub members: Vec<String>,
    pub label: String,
    pub top1: f64,
    pub accuracies: Vec<KAccuracy>,
    /// 1-based position after sorting.
    pub rank: usize,
}

impl SubsetResult {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.accuracies.iter().find(|a| a.k == k).map(|a| a.accuracy)
    }
}

/// Evaluates every non-empty member subset and ranks them by top-1
/// accuracy (descending), then subset size, then member ids.
pub fn search_subsets(batches: &[PredictionBatch], labels: &[ClassId], k_values: &[usize]) -> Result<Vec<SubsetResult>> {
    let k_count = batches.len();
    if k_count == 0 {
        return Err(Error::invalid("subset search needs at least one member"));
    }
    if k_count > MAX_MEMBERS {
        return Err(Error::invalid(format!(
            "subset search supports at most {MAX_MEMBERS} members, got {k_count}"
        )));
    }
    check_members(batches)?;
    let mut seen = HashSet::new();
    for b in batches {
        if !seen.insert(b.model_id.as_str()) {
            return Err(Error::invalid(format!("duplicate member id `{}`", b.model_id)));
        }
    }
    if labels.len() != batches[0].len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            batches[0].len()
        )));
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let masks: Vec<u32> = (1..(1u32 << k_count)).collect();
    let mut results = masks
        .par_iter()
        .map(|&mask| {
            let chosen: Vec<PredictionBatch> = (0..k_count)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| batches[i].clone())
                .collect();
            let eval = ensemble_scores(&chosen)?.evaluation_batch(labels.to_vec())?;
            let accuracies = ks
                .iter()
                .map(|&k| {
                    Ok(KAccuracy {
                        k,
                        accuracy: topk_weighted_accuracy(&eval, k)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let members: Vec<String> = chosen.iter().map(|b| b.model_id.clone()).collect();
            Ok(SubsetResult {
                label: members.join("+"),
                members,
                top1: topk_weighted_accuracy(&eval, 1)?,
                accuracies,
                rank: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    results.sort_by(|a, b| {
        b.top1
            .total_cmp(&a.top1)
            .then(a.members.len().cmp(&b.members.len()))
            .then_with(|| a.members.cmp(&b.members))
    });
    for (i, r) in results.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    if k_count > 1 && results[0].members.len() == k_count {
        results[0].label = FULL_ENSEMBLE_NAME.to_string();
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(id: &str, rows: Vec<Vec<f64>>) -> PredictionBatch {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        PredictionBatch::new(id, ids, rows).unwrap()
    }

    #[test]
    fn hand_summed_rows() {
        let a = batch("a", vec![vec![0.6, 0.3, 0.1]]);
        let b = batch("b", vec![vec![0.1, 0.55, 0.35]]);
        let s = ensemble_scores(&[a.clone(), b.clone()]).unwrap();
        let expected = [0.7, 0.85, 0.45];
        for (v, e) in s.scores[0].iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(s.model_id, "a+b");
        assert_eq!(ensemble_predict(&[a.clone(), b.clone()], 1).unwrap(), vec![vec![1]]);
        assert_eq!(ensemble_predict(&[a, b], 2).unwrap(), vec![vec![1, 0]]);
    }

    #[test]
    fn single_member_is_identity() {
        let a = batch("a", vec![vec![0.2, 0.8], vec![0.5, 0.5]]);
        assert_eq!(ensemble_scores(std::slice::from_ref(&a)).unwrap().scores, a.probs);
        assert_eq!(ensemble_predict(&[a], 1).unwrap(), vec![vec![1], vec![0]]);
    }

    #[test]
    fn duplicate_member_keeps_argmax() {
        let c = batch("c", vec![vec![0.1, 0.6, 0.3], vec![0.4, 0.2, 0.4]]);
        assert_eq!(
            ensemble_predict(&[c.clone(), c.clone()], 2).unwrap(),
            ensemble_predict(&[c], 2).unwrap()
        );
    }

    #[test]
    fn mismatches_are_rejected() {
        let a = batch("a", vec![vec![0.5, 0.5]]);
        let b = batch("b", vec![vec![0.2, 0.3, 0.5]]);
        assert!(ensemble_scores(&[a.clone(), b]).is_err());
        let mut c = batch("c", vec![vec![0.5, 0.5]]);
        c.sample_ids[0] = "other".into();
        assert!(ensemble_scores(&[a, c]).is_err());
        assert!(ensemble_scores(&[]).is_err());
    }

    #[test]
    fn subset_counts_and_limits() {
        let one = search_subsets(&[batch("a", vec![vec![0.9, 0.1]])], &[0], &[1]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].members, vec!["a"]);

        let four: Vec<_> = ["a", "b", "c", "d"].iter().map(|id| batch(id, vec![vec![0.5, 0.5]])).collect();
        assert_eq!(search_subsets(&four, &[0], &[1, 2]).unwrap().len(), 15);

        assert!(search_subsets(&[], &[], &[1]).is_err());
        let many: Vec<_> = (0..21).map(|i| batch(&format!("m{i}"), vec![vec![0.5, 0.5]])).collect();
        assert!(search_subsets(&many, &[0], &[1]).is_err());
        let dup = vec![batch("a", vec![vec![0.5, 0.5]]), batch("a", vec![vec![0.5, 0.5]])];
        assert!(search_subsets(&dup, &[0], &[1]).is_err());
    }

    #[test]
    fn ties_prefer_smaller_subsets() {
        let a = batch("a", vec![vec![0.9, 0.1]]);
        let b = batch("b", vec![vec![0.8, 0.2]]);
        let r = search_subsets(&[a, b], &[0], &[1]).unwrap();
        assert!(r.iter().all(|s| s.top1 == 1.0));
        assert_eq!(r[0].members, vec!["a"]);
        assert_eq!(r[1].members, vec!["b"]);
        assert_eq!(r[2].members, vec!["a", "b"]);
        assert_eq!(r[2].label, "a+b");
    }
}
