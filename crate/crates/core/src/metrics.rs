//! Imbalance-aware evaluation: top-k weighted accuracy, per-class and macro
//! accuracy, confusion matrices.
//!
//! The weighted accuracy weights each class's hit rate by its frequency
//! `n_c / N`. Because the weights cancel the per-class denominators it is
//! bounded in `[0, 1]` and equals micro accuracy. The per-sample weight
//! formula applied literally, `sum_i Z_i * n_{y_i} / N`, is unnormalized;
//! it is kept as [`literal_eq2`] for auditing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::pipeline::PredictionBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationBatch {
    /// Score rows; any finite scale, only the ordering matters.
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<ClassId>,
    pub num_classes: usize,
}

impl EvaluationBatch {
    pub fn new(probs: Vec<Vec<f64>>, labels: Vec<ClassId>, num_classes: usize) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score rows for {} labels",
                probs.len(),
                labels.len()
            )));
        }
        for (i, row) in probs.iter().enumerate() {
            if row.len() != num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} scores, expected {num_classes}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a non-finite score")));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::ClassOutOfRange {
                class_id: y,
                num_classes,
            });
        }
        Ok(EvaluationBatch {
            probs,
            labels,
            num_classes,
        })
    }

    pub fn from_predictions(batch: &PredictionBatch, labels: Vec<ClassId>, num_classes: usize) -> Result<Self> {
        Self::new(batch.probs.clone(), labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_classes {
            return Err(Error::invalid(format!("k = {k} outside [1, {}]", self.num_classes)));
        }
        Ok(())
    }

    /// `Z_i^k` for every sample.
    pub fn topk_hits(&self, k: usize) -> Result<Vec<bool>> {
        self.check_k(k)?;
        self.probs
            .iter()
            .zip(&self.labels)
            .map(|(row, y)| Ok(topk_set(row, k)?.contains(y)))
            .collect()
    }

    /// Top-1 labels, ties to the lower index.
    pub fn top1(&self) -> Vec<ClassId> {
        self.probs.iter().map(|row| argmax(row)).collect()
    }
}

fn argmax(row: &[f64]) -> ClassId {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// The `k` highest-scoring labels in descending score order; equal scores
/// go to the lower label first.
pub fn topk_set(row: &[f64], k: usize) -> Result<Vec<ClassId>> {
    if k == 0 || k > row.len() {
        return Err(Error::invalid(format!("k = {k} outside [1, {}]", row.len())));
    }
    let mut idx: Vec<ClassId> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

fn per_class_hits(batch: &EvaluationBatch, k: usize) -> Result<Vec<usize>> {
    let mut hits = vec![0; batch.num_classes];
    for (&y, hit) in batch.labels.iter().zip(batch.topk_hits(k)?) {
        hits[y] += usize::from(hit);
    }
    Ok(hits)
}

/// Frequency-weighted per-class top-k hit rate, `sum_c (n_c / N) * (h_c / n_c)`.
/// The weights cancel exactly, so it is accumulated as `sum_c h_c / N`.
pub fn topk_weighted_accuracy(batch: &EvaluationBatch, k: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits: usize = per_class_hits(batch, k)?.into_iter().sum();
    Ok(hits as f64 / batch.len() as f64)
}

/// `sum_i Z_i^k * w_i` with `w_i = #{j : y_j = y_i} / N`, evaluated term by
/// term without simplification. Exceeds 1 on most datasets.
pub fn literal_eq2(batch: &EvaluationBatch, k: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let hits = batch.topk_hits(k)?;
    let mut total = 0.0;
    for (i, &yi) in batch.labels.iter().enumerate() {
        if !hits[i] {
            continue;
        }
        let same = batch.labels.iter().filter(|&&yj| yj == yi).count();
        total += same as f64 / n;
    }
    Ok(total)
}

/// Per-class top-k hit rates; `None` for classes without samples.
pub fn per_class_accuracy(batch: &EvaluationBatch, k: usize) -> Result<Vec<Option<f64>>> {
    let hits = per_class_hits(batch, k)?;
    Ok(batch
        .class_counts()
        .iter()
        .zip(hits)
        .map(|(&n, h)| (n > 0).then(|| h as f64 / n as f64))
        .collect())
}

/// Unweighted mean over classes that have samples.
pub fn macro_accuracy(per_class: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Header row of predicted-class indices, then one row per true class.
    pub fn to_csv(&self) -> String {
        let c = self.num_classes();
        let mut out = String::from("true\\pred");
        for j in 0..c {
            let _ = write!(out, ",{j}");
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(predicted: &[ClassId], truth: &[ClassId], num_classes: usize) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        for class_id in [p, t] {
            if class_id >= num_classes {
                return Err(Error::ClassOutOfRange { class_id, num_classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkSummary {
    pub k: usize,
    /// Frequency-weighted accuracy (equals micro accuracy).
    pub weighted: f64,
    pub macro_accuracy: f64,
    pub literal_eq2: f64,
    pub per_class: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub num_samples: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub topk: Vec<TopkSummary>,
    pub confusion: ConfusionMatrix,
}

impl EvaluationReport {
    pub fn summary(&self, k: usize) -> Option<&TopkSummary> {
        self.topk.iter().find(|s| s.k == k)
    }
}

pub fn evaluate(batch: &EvaluationBatch, k_values: &[usize]) -> Result<EvaluationReport> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let topk = ks
        .iter()
        .map(|&k| {
            let per_class = per_class_accuracy(batch, k)?;
            Ok(TopkSummary {
                k,
                weighted: topk_weighted_accuracy(batch, k)?,
                macro_accuracy: macro_accuracy(&per_class),
                literal_eq2: literal_eq2(batch, k)?,
                per_class,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        num_samples: batch.len(),
        num_classes: batch.num_classes,
        class_counts: batch.class_counts(),
        topk,
        confusion: confusion_matrix(&batch.top1(), &batch.labels, batch.num_classes)?,
    })
}
