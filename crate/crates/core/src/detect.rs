//! Detection-based classification.
//!
//! Detectors are plug-ins that see the image resized to the configured
//! input size and return scored boxes in that space; [`detect`] maps them
//! back to the original image and applies the score threshold. An image is
//! then classified by its single highest-scoring (box, class) pair, and an
//! image without boxes counts as a miss.

use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;

use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoundingBox, ClassId, DatasetManifest, ImageRecord};
use crate::error::{Error, Result};
use crate::metrics::{macro_accuracy, EvaluationBatch};
use crate::pipeline::LossKind;

/// Class scores of one box: a full per-class vector, or only the
/// detector's best class.
#[derive(Clone, Debug, PartialEq)]
pub enum BoxScores {
    PerClass(Vec<f64>),
    Best { class_id: ClassId, score: f64 },
}

impl BoxScores {
    /// `(class, score)` pairs in ascending class order.
    pub fn pairs(&self) -> Vec<(ClassId, f64)> {
        match self {
            BoxScores::PerClass(v) => v.iter().copied().enumerate().collect(),
            BoxScores::Best { class_id, score } => vec![(*class_id, *score)],
        }
    }

    /// Highest score, ties to the lower class.
    pub fn best(&self) -> (ClassId, f64) {
        self.pairs()
            .into_iter()
            .fold((0, f64::NEG_INFINITY), |b, p| if p.1 > b.1 { p } else { b })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBox {
    /// Geometry; `class_id` holds the best-scoring class.
    pub bbox: BoundingBox,
    pub scores: BoxScores,
}

impl ScoredBox {
    pub fn best(xmin: u32, ymin: u32, xmax: u32, ymax: u32, class_id: ClassId, score: f64) -> Result<Self> {
        let s = ScoredBox {
            bbox: BoundingBox::new(xmin, ymin, xmax, ymax, class_id)?,
            scores: BoxScores::Best { class_id, score },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn per_class(xmin: u32, ymin: u32, xmax: u32, ymax: u32, scores: Vec<f64>) -> Result<Self> {
        let scores = BoxScores::PerClass(scores);
        let s = ScoredBox {
            bbox: BoundingBox::new(xmin, ymin, xmax, ymax, scores.best().0)?,
            scores,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        let pairs = self.scores.pairs();
        if pairs.is_empty() {
            return Err(Error::invalid("box has no class scores"));
        }
        if pairs.iter().any(|(_, s)| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("box score outside [0, 1]"));
        }
        Ok(())
    }

    pub fn confidence(&self) -> f64 {
        self.scores.best().1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet {
    pub sample_id: String,
    pub boxes: Vec<ScoredBox>,
}

#[derive(Serialize, Deserialize)]
struct LogBox {
    xmin: u32,
    ymin: u32,
    xmax: u32,
    ymax: u32,
    class_id: ClassId,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_scores: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    sample_id: String,
    boxes: Vec<LogBox>,
}

impl DetectionSet {
    /// One detection-log line:
    /// `{"sample_id":..,"boxes":[{"xmin":..,"ymin":..,"xmax":..,"ymax":..,"class_id":..,"score":..}]}`.
    /// Per-class boxes add a `class_scores` array.
    pub fn to_json_line(&self) -> Result<String> {
        let boxes = self
            .boxes
            .iter()
            .map(|b| {
                let (class_id, score) = b.scores.best();
                LogBox {
                    xmin: b.bbox.xmin,
                    ymin: b.bbox.ymin,
                    xmax: b.bbox.xmax,
                    ymax: b.bbox.ymax,
                    class_id,
                    score,
                    class_scores: match &b.scores {
                        BoxScores::PerClass(v) => Some(v.clone()),
                        BoxScores::Best { .. } => None,
                    },
                }
            })
            .collect();
        Ok(serde_json::to_string(&LogLine {
            sample_id: self.sample_id.clone(),
            boxes,
        })?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let parsed: LogLine = serde_json::from_str(line)?;
        let boxes = parsed
            .boxes
            .into_iter()
            .map(|b| match b.class_scores {
                Some(v) => ScoredBox::per_class(b.xmin, b.ymin, b.xmax, b.ymax, v),
                None => ScoredBox::best(b.xmin, b.ymin, b.xmax, b.ymax, b.class_id, b.score),
            })
            .collect::<Result<_>>()?;
        Ok(DetectionSet {
            sample_id: parsed.sample_id,
            boxes,
        })
    }
}

pub fn save_detection_log(sets: &[DetectionSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in sets {
        out.push_str(&s.to_json_line()?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_detection_log(path: impl AsRef<Path>) -> Result<Vec<DetectionSet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            DetectionSet::from_json_line(l).map_err(|e| Error::Manifest {
                line: i + 1,
                field: "<line>".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub detector_id: String,
    /// (height, width) the detector sees.
    pub input_size: (u32, u32),
    /// Boxes whose best score is below this are dropped.
    pub score_threshold: f64,
    /// Loss used when a detector is trained in-repo.
    pub loss: LossKind,
    /// Fall back to a whole-image classifier when nothing is detected.
    pub no_detection_fallback: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            detector_id: "oracle".into(),
            input_size: (400, 400),
            score_threshold: 0.0,
            loss: LossKind::DETECTOR_FOCAL,
            no_detection_fallback: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::invalid("score_threshold must be in [0, 1)"));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::invalid("detector input size must be positive"));
        }
        self.loss.validate()
    }
}

/// What a plug-in sees: the resized image plus identifying context.
pub struct DetectorInput<'a> {
    pub sample_id: &'a str,
    pub image: &'a RgbImage,
    /// (width, height) before resizing.
    pub original_size: (u32, u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Concurrency {
    /// Safe for concurrent read-only inference.
    Shared,
    /// Calls must not overlap.
    SingleInvocation,
}

pub trait Detector: Send + Sync {
    /// Boxes in the coordinate space of `input.image`.
    fn detect_raw(&self, input: &DetectorInput<'_>) -> Result<Vec<ScoredBox>>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }
}

#[derive(Clone, Default)]
pub struct DetectorRegistry {
    detectors: HashMap<String, Arc<dyn Detector>>,
}

impl DetectorRegistry {
    pub fn register(&mut self, id: impl Into<String>, detector: Arc<dyn Detector>) {
        self.detectors.insert(id.into(), detector);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Detector>> {
        self.detectors
            .get(id)
            .ok_or_else(|| Error::UnregisteredDetector(id.to_string()))
    }
}

fn scale_coord(v: u32, from: u32, to: u32) -> u32 {
    ((v as f64) * to as f64 / from as f64).round() as u32
}

/// Maps a box between image sizes given as (width, height), keeping it
/// non-degenerate and inside the destination.
pub fn map_box(b: &BoundingBox, from: (u32, u32), to: (u32, u32)) -> BoundingBox {
    let fit = |lo: u32, hi: u32, f: u32, t: u32| {
        let lo = scale_coord(lo, f, t).min(t.saturating_sub(1));
        let hi = scale_coord(hi, f, t).clamp(lo + 1, t.max(lo + 1));
        (lo, hi)
    };
    let (xmin, xmax) = fit(b.xmin, b.xmax, from.0, to.0);
    let (ymin, ymax) = fit(b.ymin, b.ymax, from.1, to.1);
    BoundingBox {
        xmin,
        ymin,
        xmax,
        ymax,
        class_id: b.class_id,
    }
}

/// Runs `cfg.detector_id` on `image`, returning boxes in original image
/// coordinates with at least `cfg.score_threshold` confidence.
pub fn detect(registry: &DetectorRegistry, sample_id: &str, image: &RgbImage, cfg: &DetectorConfig) -> Result<DetectionSet> {
    cfg.validate()?;
    let detector = registry.get(&cfg.detector_id)?;
    run_detector(detector.as_ref(), sample_id, image, cfg)
}

fn run_detector(detector: &dyn Detector, sample_id: &str, image: &RgbImage, cfg: &DetectorConfig) -> Result<DetectionSet> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Image(format!("`{sample_id}` is empty")));
    }
    let (ih, iw) = cfg.input_size;
    let resized = if (w, h) == (iw, ih) {
        image.clone()
    } else {
        imageops::resize(image, iw, ih, FilterType::Triangle)
    };
    let raw = detector.detect_raw(&DetectorInput {
        sample_id,
        image: &resized,
        original_size: (w, h),
    })?;
    let boxes = raw
        .into_iter()
        .filter(|b| b.confidence() >= cfg.score_threshold)
        .map(|mut b| {
            b.validate()?;
            b.bbox = map_box(&b.bbox, (iw, ih), (w, h));
            Ok(b)
        })
        .collect::<Result<_>>()?;
    Ok(DetectionSet {
        sample_id: sample_id.to_string(),
        boxes,
    })
}

/// Loads and detects every record, in manifest order. Runs in parallel
/// unless the detector declares itself single-invocation.
pub fn detect_records(
    registry: &DetectorRegistry,
    manifest: &DatasetManifest,
    records: &[&ImageRecord],
    cfg: &DetectorConfig,
) -> Result<Vec<DetectionSet>> {
    cfg.validate()?;
    let detector = registry.get(&cfg.detector_id)?;
    let one = |rec: &&ImageRecord| -> Result<DetectionSet> {
        let path = manifest.image_path(rec);
        let img = image::open(&path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        run_detector(detector.as_ref(), &rec.image_id, &img, cfg)
    };
    match detector.concurrency() {
        Concurrency::Shared => records.par_iter().map(one).collect(),
        Concurrency::SingleInvocation => records.iter().map(one).collect(),
    }
}

/// Returns each sample's known box with score 1.0 for its class.
pub struct OracleDetector {
    truth: HashMap<String, BoundingBox>,
}

impl OracleDetector {
    pub fn new(truth: impl IntoIterator<Item = (String, BoundingBox)>) -> Self {
        OracleDetector {
            truth: truth.into_iter().collect(),
        }
    }

    /// Uses the first annotated box of each record.
    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        Self::new(
            manifest
                .records
                .iter()
                .filter_map(|r| r.boxes.first().map(|b| (r.image_id.clone(), *b))),
        )
    }
}

impl Detector for OracleDetector {
    fn detect_raw(&self, input: &DetectorInput<'_>) -> Result<Vec<ScoredBox>> {
        let Some(b) = self.truth.get(input.sample_id) else {
            return Ok(Vec::new());
        };
        let mapped = map_box(b, input.original_size, input.image.dimensions());
        Ok(vec![ScoredBox {
            bbox: mapped,
            scores: BoxScores::Best {
                class_id: b.class_id,
                score: 1.0,
            },
        }])
    }
}

/// External detector run as a child process per image.
///
/// The command receives the sample id as its last argument and the resized
/// image as PNG bytes on stdin. It must print one detection-log line on
/// stdout, with box coordinates in the resized image's space.
pub struct ProcessDetector {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub concurrency: Concurrency,
}

impl ProcessDetector {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        ProcessDetector {
            program: program.into(),
            args,
            concurrency: Concurrency::Shared,
        }
    }
}

impl Detector for ProcessDetector {
    fn detect_raw(&self, input: &DetectorInput<'_>) -> Result<Vec<ScoredBox>> {
        let mut png = Vec::new();
        input
            .image
            .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(input.sample_id)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Detector(format!("{}: {e}", self.program.display())))?;
        if let Some(mut stdin) = child.stdin.take() {
            // A detector may exit without reading its input.
            let _ = stdin.write_all(&png);
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Detector(e.to_string()))?;
        if !out.status.success() {
            return Err(Error::Detector(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let line = stdout
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Detector("detector printed nothing".into()))?;
        Ok(DetectionSet::from_json_line(line)?.boxes)
    }

    fn concurrency(&self) -> Concurrency {
        self.concurrency
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DetectionOutcome {
    Detected {
        class_id: ClassId,
        confidence: f64,
        box_index: usize,
    },
    NoDetection,
}

impl DetectionOutcome {
    pub fn class_id(&self) -> Option<ClassId> {
        match self {
            DetectionOutcome::Detected { class_id, .. } => Some(*class_id),
            DetectionOutcome::NoDetection => None,
        }
    }
}

/// The class of the highest-scoring (box, class) pair; earlier boxes and
/// then lower classes win ties.
pub fn box_argmax_classify(dets: &DetectionSet) -> DetectionOutcome {
    let mut best = DetectionOutcome::NoDetection;
    let mut best_score = f64::NEG_INFINITY;
    for (m, b) in dets.boxes.iter().enumerate() {
        for (n, s) in b.scores.pairs() {
            if s > best_score {
                best_score = s;
                best = DetectionOutcome::Detected {
                    class_id: n,
                    confidence: s,
                    box_index: m,
                };
            }
        }
    }
    best
}

/// Replaces no-detection outcomes with a whole-image classifier's labels.
pub fn apply_fallback(outcomes: &[DetectionOutcome], fallback: &[ClassId]) -> Result<Vec<Option<ClassId>>> {
    if outcomes.len() != fallback.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outcomes for {} fallback labels",
            outcomes.len(),
            fallback.len()
        )));
    }
    Ok(outcomes
        .iter()
        .zip(fallback)
        .map(|(o, &f)| Some(o.class_id().unwrap_or(f)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionAccuracy {
    /// correct / N, misses counted wrong.
    pub overall: f64,
    /// Frequency-weighted per-class accuracy; equals `overall`.
    pub weighted: f64,
    pub macro_accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub no_detections: usize,
    pub num_samples: usize,
}

/// Accuracy of per-sample predicted labels (`None` = no detection).
pub fn detection_accuracy(predicted: &[Option<ClassId>], labels: &[ClassId], num_classes: usize) -> Result<DetectionAccuracy> {
    if predicted.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outcomes for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&class_id) = labels.iter().chain(predicted.iter().flatten()).find(|&&c| c >= num_classes) {
        return Err(Error::ClassOutOfRange { class_id, num_classes });
    }
    let n = labels.len();
    let correct = predicted
        .iter()
        .zip(labels)
        .filter(|(p, y)| **p == Some(**y))
        .count();

    let mut per_n = vec![0usize; num_classes];
    let mut per_hit = vec![0usize; num_classes];
    for (p, &y) in predicted.iter().zip(labels) {
        per_n[y] += 1;
        per_hit[y] += usize::from(*p == Some(y));
    }
    let per_class: Vec<Option<f64>> = per_n
        .iter()
        .zip(&per_hit)
        .map(|(&n, &h)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let weighted = per_n
        .iter()
        .zip(&per_class)
        .map(|(&nc, acc)| nc as f64 / n as f64 * acc.unwrap_or(0.0))
        .sum();
    Ok(DetectionAccuracy {
        overall: correct as f64 / n as f64,
        weighted,
        macro_accuracy: macro_accuracy(&per_class),
        per_class,
        no_detections: predicted.iter().filter(|p| p.is_none()).count(),
        num_samples: n,
    })
}

/// One-hot rows for detection outcomes; misses get an all-zero row that
/// cannot contain the true label at top-1. Lets the metrics module score
/// detection results.
pub fn outcomes_as_evaluation(predicted: &[Option<ClassId>], labels: &[ClassId], num_classes: usize) -> Result<EvaluationBatch> {
    let rows = predicted
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let mut row = vec![0.0; num_classes];
            match p {
                Some(c) if *c < num_classes => row[*c] = 1.0,
                Some(_) => {}
                // Put the miss's mass on some other class so the true label
                // never ranks first.
                None => row[(y + 1) % num_classes] = 1.0,
            }
            row
        })
        .collect();
    EvaluationBatch::new(rows, labels.to_vec(), num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(boxes: Vec<ScoredBox>) -> DetectionSet {
        DetectionSet {
            sample_id: "s".into(),
            boxes,
        }
    }

    #[test]
    fn argmax_cases() {
        let one = set(vec![ScoredBox::best(0, 0, 5, 5, 3, 0.9).unwrap()]);
        assert_eq!(
            box_argmax_classify(&one),
            DetectionOutcome::Detected { class_id: 3, confidence: 0.9, box_index: 0 }
        );
        let three = set(vec![
            ScoredBox::best(0, 0, 5, 5, 1, 0.6).unwrap(),
            ScoredBox::best(1, 1, 5, 5, 3, 0.9).unwrap(),
            ScoredBox::best(2, 2, 5, 5, 3, 0.2).unwrap(),
        ]);
        assert_eq!(box_argmax_classify(&three).class_id(), Some(3));
        assert_eq!(box_argmax_classify(&set(vec![])), DetectionOutcome::NoDetection);
    }

    #[test]
    fn ties_go_to_earlier_box_then_lower_class() {
        let s = set(vec![
            ScoredBox::per_class(0, 0, 4, 4, vec![0.1, 0.7, 0.7]).unwrap(),
            ScoredBox::best(0, 0, 4, 4, 0, 0.7).unwrap(),
        ]);
        assert_eq!(
            box_argmax_classify(&s),
            DetectionOutcome::Detected { class_id: 1, confidence: 0.7, box_index: 0 }
        );
    }

    #[test]
    fn accuracy_counts() {
        let acc = detection_accuracy(&[Some(0), Some(1), Some(0), Some(1)], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(acc.overall, 1.0);
        let acc = detection_accuracy(&[Some(0), Some(1), Some(0), Some(0)], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(acc.overall, 0.75);
        let acc = detection_accuracy(&[Some(0), None, Some(1)], &[0, 0, 1], 2).unwrap();
        assert!((acc.overall - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc.per_class, vec![Some(0.5), Some(1.0)]);
        assert_eq!(acc.no_detections, 1);
        assert!(detection_accuracy(&[Some(0)], &[0, 1], 2).is_err());
    }

    #[test]
    fn fallback_fills_misses_only() {
        let outcomes = [
            DetectionOutcome::NoDetection,
            DetectionOutcome::Detected { class_id: 2, confidence: 0.5, box_index: 0 },
        ];
        assert_eq!(apply_fallback(&outcomes, &[1, 0]).unwrap(), vec![Some(1), Some(2)]);
    }

    #[test]
    fn log_line_round_trip() {
        let s = DetectionSet {
            sample_id: "img_1".into(),
            boxes: vec![
                ScoredBox::best(1, 2, 30, 40, 2, 0.75).unwrap(),
                ScoredBox::per_class(3, 3, 9, 9, vec![0.1, 0.8, 0.1]).unwrap(),
            ],
        };
        let line = s.to_json_line().unwrap();
        assert!(line.starts_with(r#"{"sample_id":"img_1","boxes":[{"xmin":1,"ymin":2,"xmax":30,"ymax":40,"class_id":2,"score":0.75}"#));
        assert_eq!(DetectionSet::from_json_line(&line).unwrap(), s);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(ScoredBox::best(5, 0, 5, 5, 0, 0.5).is_err());
        assert!(ScoredBox::best(0, 0, 5, 5, 0, 1.5).is_err());
        assert!(DetectorConfig { score_threshold: 1.0, ..DetectorConfig::default() }.validate().is_err());
    }

    #[test]
    fn unregistered_detector() {
        let reg = DetectorRegistry::default();
        let img = RgbImage::new(4, 4);
        assert!(matches!(
            detect(&reg, "s", &img, &DetectorConfig::default()),
            Err(Error::UnregisteredDetector(_))
        ));
    }

    #[test]
    fn threshold_filters_low_scores() {
        struct Fixed;
        impl Detector for Fixed {
            fn detect_raw(&self, _: &DetectorInput<'_>) -> Result<Vec<ScoredBox>> {
                Ok(vec![
                    ScoredBox::best(10, 10, 50, 50, 0, 0.4)?,
                    ScoredBox::best(20, 20, 60, 60, 1, 0.8)?,
                ])
            }
        }
        let mut reg = DetectorRegistry::default();
        reg.register("fixed", Arc::new(Fixed));
        let img = RgbImage::new(200, 100);
        let cfg = DetectorConfig { detector_id: "fixed".into(), score_threshold: 0.5, ..DetectorConfig::default() };
        let d = detect(&reg, "s", &img, &cfg).unwrap();
        assert_eq!(d.boxes.len(), 1);
        assert_eq!(d.boxes[0].bbox.class_id, 1);
        // 400x400 -> 200x100
        assert_eq!((d.boxes[0].bbox.xmin, d.boxes[0].bbox.ymin, d.boxes[0].bbox.xmax, d.boxes[0].bbox.ymax), (10, 5, 30, 15));
    }

    #[test]
    fn process_detector_speaks_log_format() {
        let det = ProcessDetector::new(
            "sh",
            vec![
                "-c".into(),
                r#"cat > /dev/null; echo "{\"sample_id\":\"$0\",\"boxes\":[{\"xmin\":40,\"ymin\":80,\"xmax\":200,\"ymax\":240,\"class_id\":1,\"score\":0.9}]}""#.into(),
            ],
        );
        let mut reg = DetectorRegistry::default();
        reg.register("proc", Arc::new(det));
        let cfg = DetectorConfig { detector_id: "proc".into(), ..DetectorConfig::default() };
        let d = detect(&reg, "abc", &RgbImage::new(100, 100), &cfg).unwrap();
        assert_eq!(d.sample_id, "abc");
        assert_eq!(d.boxes.len(), 1);
        assert_eq!((d.boxes[0].bbox.xmin, d.boxes[0].bbox.ymin, d.boxes[0].bbox.xmax, d.boxes[0].bbox.ymax), (10, 20, 50, 60));

        let failing = ProcessDetector::new("sh", vec!["-c".into(), "exit 3".into()]);
        reg.register("fail", Arc::new(failing));
        let cfg = DetectorConfig { detector_id: "fail".into(), ..DetectorConfig::default() };
        assert!(matches!(detect(&reg, "x", &RgbImage::new(8, 8), &cfg), Err(Error::Detector(_))));
    }
}
