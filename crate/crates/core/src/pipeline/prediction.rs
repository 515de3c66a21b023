use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-sample class probabilities produced by one model.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine<'a> {
    sample_id: std::borrow::Cow<'a, str>,
    probs: std::borrow::Cow<'a, [f64]>,
    model_id: std::borrow::Cow<'a, str>,
}

impl PredictionBatch {
    pub fn new(model_id: impl Into<String>, sample_ids: Vec<String>, probs: Vec<Vec<f64>>) -> Result<Self> {
        let b = PredictionBatch {
            model_id: model_id.into(),
            sample_ids,
            probs,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_ids.len() != self.probs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sample ids for {} rows",
                self.sample_ids.len(),
                self.probs.len()
            )));
        }
        let c = self.num_classes();
        for (id, row) in self.sample_ids.iter().zip(&self.probs) {
            if row.len() != c {
                return Err(Error::ShapeMismatch(format!("row `{id}` has {} classes, expected {c}", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("row `{id}` has a probability outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("row `{id}` sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (id, row) in self.sample_ids.iter().zip(&self.probs) {
            out.push_str(&serde_json::to_string(&PredictionLine {
                sample_id: id.as_str().into(),
                probs: row.as_slice().into(),
                model_id: self.model_id.as_str().into(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses a prediction log. All lines must carry the same `model_id`.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut model_id: Option<String> = None;
        let mut sample_ids = Vec::new();
        let mut probs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: PredictionLine = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                field: "<line>".into(),
                message: e.to_string(),
            })?;
            match &model_id {
                None => model_id = Some(parsed.model_id.into_owned()),
                Some(m) if *m != parsed.model_id => {
                    return Err(Error::Manifest {
                        line: i + 1,
                        field: "model_id".into(),
                        message: format!("`{}` differs from `{m}`", parsed.model_id),
                    })
                }
                Some(_) => {}
            }
            sample_ids.push(parsed.sample_id.into_owned());
            probs.push(parsed.probs.into_owned());
        }
        Self::new(model_id.unwrap_or_default(), sample_ids, probs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(PredictionBatch::new("m", vec!["a".into()], vec![vec![0.25, 0.75]]).is_ok());
        assert!(PredictionBatch::new("m", vec!["a".into()], vec![vec![0.25, 0.7]]).is_err());
        assert!(PredictionBatch::new("m", vec!["a".into()], vec![vec![-0.25, 1.25]]).is_err());
        assert!(PredictionBatch::new("m", vec![], vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn jsonl_line_format() {
        let b = PredictionBatch::new("net", vec!["s1".into()], vec![vec![0.5, 0.5]]).unwrap();
        assert_eq!(b.to_jsonl().unwrap(), "{\"sample_id\":\"s1\",\"probs\":[0.5,0.5],\"model_id\":\"net\"}\n");
        assert_eq!(PredictionBatch::from_jsonl(&b.to_jsonl().unwrap()).unwrap(), b);
    }

    #[test]
    fn mixed_model_ids_rejected() {
        let text = "{\"sample_id\":\"a\",\"probs\":[1.0,0.0],\"model_id\":\"x\"}\n{\"sample_id\":\"b\",\"probs\":[1.0,0.0],\"model_id\":\"y\"}\n";
        assert!(PredictionBatch::from_jsonl(text).is_err());
    }
}
