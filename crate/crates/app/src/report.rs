//! Text tables and the report bundle written by `report`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lesionbench_core::data::{ClassId, ClassStats, DatasetManifest};
use lesionbench_core::ensemble::{ensemble_scores, SubsetResult, FULL_ENSEMBLE_NAME};
use lesionbench_core::metrics::{evaluate, EvaluationBatch, EvaluationReport};
use lesionbench_core::pipeline::PredictionBatch;
use serde::{Deserialize, Serialize};

use crate::plot;

pub const REPORT_JSON: &str = "report.json";
pub const TABLES_TXT: &str = "tables.txt";
pub const CONFUSION_PNG: &str = "confusion.png";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const PER_CLASS_PNG: &str = "per_class.png";

/// Percentage with two decimals, as in the result tables.
pub fn pct(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model_id: String,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub class_names: Vec<String>,
    pub k_values: Vec<usize>,
    pub models: Vec<ModelEvaluation>,
    /// Sum of all models, present when there are at least two.
    pub ensemble: Option<ModelEvaluation>,
}

impl ReportBundle {
    /// The evaluation the plots are drawn from: the ensemble when there is
    /// one, otherwise the only model.
    pub fn primary(&self) -> &ModelEvaluation {
        self.ensemble.as_ref().unwrap_or(&self.models[0])
    }

    pub fn rows(&self) -> impl Iterator<Item = &ModelEvaluation> {
        self.models.iter().chain(self.ensemble.as_ref())
    }
}

/// Ground-truth labels for `sample_ids`, looked up by image id.
pub fn labels_for(manifest: &DatasetManifest, sample_ids: &[String]) -> Result<Vec<ClassId>> {
    let by_id: HashMap<&str, ClassId> = manifest
        .records
        .iter()
        .map(|r| (r.image_id.as_str(), r.class_id))
        .collect();
    sample_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .with_context(|| format!("sample `{id}` is not in the manifest"))
        })
        .collect()
}

pub fn build_report(manifest: &DatasetManifest, batches: &[PredictionBatch], k_values: &[usize]) -> Result<ReportBundle> {
    if batches.is_empty() {
        bail!("report needs at least one prediction log");
    }
    let c = manifest.num_classes();
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut models = Vec::new();
    for b in batches {
        let labels = labels_for(manifest, &b.sample_ids)?;
        let eval = EvaluationBatch::from_predictions(b, labels, c)
            .with_context(|| format!("prediction log of `{}`", b.model_id))?;
        models.push(ModelEvaluation {
            model_id: b.model_id.clone(),
            report: evaluate(&eval, &ks)?,
        });
    }
    let ensemble = if batches.len() > 1 {
        let summed = ensemble_scores(batches)?;
        let labels = labels_for(manifest, &summed.sample_ids)?;
        let eval = EvaluationBatch::new(summed.scores, labels, c)?;
        Some(ModelEvaluation {
            model_id: FULL_ENSEMBLE_NAME.to_string(),
            report: evaluate(&eval, &ks)?,
        })
    } else {
        None
    };
    Ok(ReportBundle {
        class_names: manifest.class_names.clone(),
        k_values: ks,
        models,
        ensemble,
    })
}

fn render_rows(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Model x top-k accuracy table, values in percent.
pub fn topk_table(bundle: &ReportBundle) -> String {
    let mut header = vec!["Model".to_string()];
    header.extend(bundle.k_values.iter().map(|k| format!("Top-{k}")));
    let rows: Vec<Vec<String>> = bundle
        .rows()
        .map(|m| {
            let mut row = vec![m.model_id.clone()];
            row.extend(m.report.topk.iter().map(|s| pct(s.weighted)));
            row
        })
        .collect();
    render_rows(&header, &rows)
}

/// Per-class top-1 accuracy table; classes absent from the test set show `-`.
pub fn per_class_table(bundle: &ReportBundle) -> String {
    let c = bundle.class_names.len();
    let mut header = vec!["Model".to_string()];
    header.extend((0..c).map(|i| i.to_string()));
    header.push("Overall".into());
    let rows: Vec<Vec<String>> = bundle
        .rows()
        .filter_map(|m| {
            let top1 = m.report.summary(1)?;
            let mut row = vec![m.model_id.clone()];
            row.extend(top1.per_class.iter().map(|a| a.map_or("-".into(), pct)));
            row.push(pct(top1.weighted));
            Some(row)
        })
        .collect();
    render_rows(&header, &rows)
}

/// Train/test image counts per class.
pub fn stats_table(stats: &ClassStats, class_names: &[String]) -> String {
    let header = ["Index", "Class name", "#Train", "#Test"].map(String::from);
    let rows: Vec<Vec<String>> = stats
        .per_class
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                i.to_string(),
                class_names[i].clone(),
                c.train.to_string(),
                c.test.to_string(),
            ]
        })
        .collect();
    let mut out = String::new();
    let name_w = rows.iter().map(|r| r[1].len()).chain([header[1].len()]).max().unwrap_or(0);
    let train_w = rows.iter().map(|r| r[2].len()).chain([header[2].len()]).max().unwrap_or(0);
    let test_w = rows.iter().map(|r| r[3].len()).chain([header[3].len()]).max().unwrap_or(0);
    for row in std::iter::once(&header[..]).chain(rows.iter().map(Vec::as_slice)) {
        let _ = writeln!(
            out,
            "{:<5}  {:<name_w$}  {:>train_w$}  {:>test_w$}",
            row[0], row[1], row[2], row[3]
        );
    }
    out
}

/// Subset-search results, best first.
pub fn subsets_table(results: &[SubsetResult]) -> String {
    let ks: Vec<usize> = results
        .first()
        .map(|r| r.accuracies.iter().map(|a| a.k).collect())
        .unwrap_or_default();
    let mut header = vec!["Rank".to_string(), "Ensemble".to_string()];
    header.extend(ks.iter().map(|k| format!("Top-{k}")));
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut row = vec![r.rank.to_string(), r.label.clone()];
            row.extend(r.accuracies.iter().map(|a| pct(a.accuracy)));
            row
        })
        .collect();
    let mut out = String::new();
    let w: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    for row in std::iter::once(&header).chain(rows.iter()) {
        let mut line = format!("{:>w0$}  {:<w1$}", row[0], row[1], w0 = w[0], w1 = w[1]);
        for (i, cell) in row.iter().enumerate().skip(2) {
            let _ = write!(line, "  {cell:>w$}", w = w[i]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// One line naming the primary model's overall top-1 accuracy.
pub fn headline(bundle: &ReportBundle) -> String {
    let m = bundle.primary();
    match m.report.summary(1) {
        Some(s) => format!("{}: overall top-1 {}%", m.model_id, pct(s.weighted)),
        None => format!("{}: top-1 not requested", m.model_id),
    }
}

pub fn tables_text(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    out.push_str("Top-k accuracy (%)\n");
    out.push_str(&topk_table(bundle));
    out.push('\n');
    out.push_str("Per-class top-1 accuracy (%)\n");
    out.push_str(&per_class_table(bundle));
    out.push('\n');
    out.push_str(&headline(bundle));
    out.push('\n');
    out
}

/// Writes report.json, tables.txt, confusion.csv, confusion.png and
/// per_class.png into `out_dir`.
pub fn write_bundle(bundle: &ReportBundle, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = out_dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    write(REPORT_JSON, serde_json::to_string_pretty(bundle)?.as_bytes())?;
    write(TABLES_TXT, tables_text(bundle).as_bytes())?;
    let primary = &bundle.primary().report;
    write(CONFUSION_CSV, primary.confusion.to_csv().as_bytes())?;
    plot::render_confusion(&primary.confusion)
        .save(out_dir.join(CONFUSION_PNG))
        .context("writing confusion heatmap")?;
    let per_class = primary
        .summary(1)
        .or(primary.topk.first())
        .map(|s| s.per_class.clone())
        .unwrap_or_default();
    plot::render_per_class(&per_class)
        .save(out_dir.join(PER_CLASS_PNG))
        .context("writing per-class chart")?;
    Ok(())
}
