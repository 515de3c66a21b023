//! Annotated image datasets: the JSON-Lines manifest, Pascal-VOC box import,
//! stratified splitting, noise cleaning and per-class statistics.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng::mix_seed;

pub type ClassId = usize;

pub const SCHEMA_VERSION: u32 = 1;

/// Default held-out share. The per-class counts of the reference dataset
/// (e.g. 1598 train / 399 test) correspond to 20%, not the 25% a 3:1 ratio
/// would give.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Axis-aligned lesion box in pixel coordinates, half-open: a pixel `(x, y)`
/// is inside when `xmin <= x < xmax` and `ymin <= y < ymax`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
    pub class_id: ClassId,
}

impl BoundingBox {
    pub fn new(xmin: u32, ymin: u32, xmax: u32, ymax: u32, class_id: ClassId) -> Result<Self> {
        let b = BoundingBox {
            xmin,
            ymin,
            xmax,
            ymax,
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.xmax <= self.xmin || self.ymax <= self.ymin {
            return Err(Error::DegenerateBox {
                xmin: self.xmin as i64,
                ymin: self.ymin as i64,
                xmax: self.xmax as i64,
                ymax: self.ymax as i64,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.xmin && x < self.xmax && y >= self.ymin && y < self.ymax
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.xmax <= width && self.ymax <= height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub class_id: ClassId,
    pub split: Split,
    pub boxes: Vec<BoundingBox>,
    /// Set by curation when the lesion is covered or cured.
    pub noise_flag: bool,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, path: impl Into<PathBuf>, class_id: ClassId) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            path: path.into(),
            class_id,
            split: Split::Unassigned,
            boxes: Vec::new(),
            noise_flag: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    schema_version: u32,
    class_names: Vec<String>,
}

/// Catalog of image records. Relative record paths are resolved against the
/// directory the manifest was loaded from (see [`DatasetManifest::image_path`]).
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub records: Vec<ImageRecord>,
    base_dir: Option<PathBuf>,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version
            && self.class_names == other.class_names
            && self.records == other.records
    }
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, records: Vec<ImageRecord>) -> Result<Self> {
        let m = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            class_names,
            records,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        match &self.base_dir {
            Some(base) if record.path.is_relative() => base.join(&record.path),
            _ => record.path.clone(),
        }
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn class_id_of(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Copy of this manifest holding `records` instead, keeping class names
    /// and base directory.
    pub fn with_records(&self, records: Vec<ImageRecord>) -> Self {
        DatasetManifest {
            schema_version: self.schema_version,
            class_names: self.class_names.clone(),
            records,
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let mut seen = HashSet::with_capacity(self.records.len());
        for rec in &self.records {
            if !seen.insert(rec.image_id.as_str()) {
                return Err(Error::DuplicateImageId(rec.image_id.clone()));
            }
            validate_record(rec, c)?;
        }
        Ok(())
    }

    /// Canonical serialization: header line, then one record per line, each
    /// terminated by `\n`.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            schema_version: self.schema_version,
            class_names: self.class_names.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());

        let (hline, htext) = lines.next().ok_or_else(|| Error::Manifest {
            line: 1,
            field: "schema_version".into(),
            message: "missing header line".into(),
        })?;
        let header = parse_object(hline, htext)?;
        let schema_version: u32 = take_field(&header, "schema_version", hline)?;
        if schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest {
                line: hline,
                field: "schema_version".into(),
                message: format!("unsupported version {schema_version}"),
            });
        }
        let class_names: Vec<String> = take_field(&header, "class_names", hline)?;
        let c = class_names.len();

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (line, text) in lines {
            let obj = parse_object(line, text)?;
            let rec = ImageRecord {
                image_id: take_field(&obj, "image_id", line)?,
                path: take_field(&obj, "path", line)?,
                class_id: take_field(&obj, "class_id", line)?,
                split: take_field(&obj, "split", line)?,
                boxes: take_field(&obj, "boxes", line)?,
                noise_flag: take_field(&obj, "noise_flag", line)?,
            };
            if rec.path.as_os_str().is_empty() {
                return Err(Error::Manifest {
                    line,
                    field: "path".into(),
                    message: "empty path".into(),
                });
            }
            for b in &rec.boxes {
                b.validate().map_err(|e| Error::Manifest {
                    line,
                    field: "boxes".into(),
                    message: e.to_string(),
                })?;
            }
            if !seen.insert(rec.image_id.clone()) {
                return Err(Error::DuplicateImageId(rec.image_id));
            }
            validate_record(&rec, c)?;
            records.push(rec);
        }

        Ok(DatasetManifest {
            schema_version,
            class_names,
            records,
            base_dir: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_jsonl(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

/// Convenience alias for [`DatasetManifest::load`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    DatasetManifest::load(path)
}

fn validate_record(rec: &ImageRecord, num_classes: usize) -> Result<()> {
    if rec.class_id >= num_classes {
        return Err(Error::ClassOutOfRange {
            class_id: rec.class_id,
            num_classes,
        });
    }
    if rec.path.as_os_str().is_empty() {
        return Err(Error::invalid(format!("record `{}` has an empty path", rec.image_id)));
    }
    for b in &rec.boxes {
        b.validate()?;
        if b.class_id >= num_classes {
            return Err(Error::ClassOutOfRange {
                class_id: b.class_id,
                num_classes,
            });
        }
    }
    Ok(())
}

fn parse_object(line: usize, text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Manifest {
            line,
            field: "<line>".into(),
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::Manifest {
            line,
            field: "<line>".into(),
            message: e.to_string(),
        }),
    }
}

fn take_field<T: DeserializeOwned>(obj: &Map<String, Value>, field: &str, line: usize) -> Result<T> {
    let value = obj.get(field).ok_or_else(|| Error::Manifest {
        line,
        field: field.into(),
        message: "missing".into(),
    })?;
    T::deserialize(value).map_err(|e| Error::Manifest {
        line,
        field: field.into(),
        message: e.to_string(),
    })
}

/// Parses a LabelImg (Pascal-VOC) annotation into boxes, in document order.
/// Object names are resolved against `class_names`.
pub fn parse_voc_annotation(xml_text: &str, class_names: &[String]) -> Result<Vec<BoundingBox>> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| Error::Xml(e.to_string()))?;
    let mut boxes = Vec::new();
    for object in doc
        .root_element()
        .children()
        .filter(|n| n.has_tag_name("object"))
    {
        let name = child_text(object, "name")
            .ok_or_else(|| Error::Xml("object without <name>".into()))?;
        let class_id = class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))?;
        let bndbox = object
            .children()
            .find(|n| n.has_tag_name("bndbox"))
            .ok_or_else(|| Error::Xml(format!("object `{name}` without <bndbox>")))?;
        let coord = |tag: &str| -> Result<i64> {
            let text = child_text(bndbox, tag)
                .ok_or_else(|| Error::Xml(format!("<bndbox> missing <{tag}>")))?;
            text.parse::<i64>()
                .or_else(|_| text.parse::<f64>().map(|v| v.round() as i64))
                .map_err(|_| Error::Xml(format!("<{tag}> is not a number: `{text}`")))
        };
        let (xmin, ymin, xmax, ymax) = (coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?);
        if xmin < 0 || ymin < 0 || xmax <= xmin || ymax <= ymin || xmax > u32::MAX as i64 || ymax > u32::MAX as i64 {
            return Err(Error::DegenerateBox { xmin, ymin, xmax, ymax });
        }
        boxes.push(BoundingBox {
            xmin: xmin as u32,
            ymin: ymin as u32,
            xmax: xmax as u32,
            ymax: ymax as u32,
            class_id,
        });
    }
    Ok(boxes)
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, tag: &str) -> Option<&'a str> {
    node.children()
        .find(|n| n.has_tag_name(tag))
        .and_then(|n| n.text())
        .map(str::trim)
}

/// Number of test records for a class of `n` records: round-half-even of
/// `n * test_fraction`, clamped so both partitions keep at least one record.
pub fn test_count(n: usize, test_fraction: f64) -> usize {
    let raw = (n as f64 * test_fraction).round_ties_even() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Stratified re-split of every record. Assignment depends only on the
/// manifest, the fraction and the seed.
pub fn split_dataset(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let c = manifest.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, rec) in manifest.records.iter().enumerate() {
        by_class[rec.class_id].push(i);
    }

    let mut records = manifest.records.clone();
    for (class_id, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                class_id,
                count: members.len(),
            });
        }
        let n_test = test_count(members.len(), test_fraction);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, class_id as u64));
        members.shuffle(&mut rng);
        for (pos, &idx) in members.iter().enumerate() {
            records[idx].split = if pos < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(manifest.with_records(records))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleanOutcome {
    pub manifest: DatasetManifest,
    pub removed: usize,
}

/// Drops every record flagged as noise.
pub fn clean_dataset(manifest: &DatasetManifest) -> CleanOutcome {
    let kept: Vec<ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| !r.noise_flag)
        .cloned()
        .collect();
    let removed = manifest.records.len() - kept.len();
    CleanOutcome {
        manifest: manifest.with_records(kept),
        removed,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub train: usize,
    pub test: usize,
    pub unassigned: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub per_class: Vec<ClassCount>,
    /// Total sample count.
    pub n: usize,
    /// Class count.
    pub c: usize,
}

pub fn class_stats(manifest: &DatasetManifest) -> ClassStats {
    let c = manifest.num_classes();
    let mut per_class = vec![ClassCount::default(); c];
    for rec in &manifest.records {
        let entry = &mut per_class[rec.class_id];
        match rec.split {
            Split::Train => entry.train += 1,
            Split::Test => entry.test += 1,
            Split::Unassigned => entry.unassigned += 1,
        }
        entry.total += 1;
    }
    ClassStats {
        per_class,
        n: manifest.records.len(),
        c,
    }
}

/// The per-sample weight `w_i = #{j : y_j = y_i} / N`, taken verbatim.
/// These are class frequencies, so they do not sum to one.
pub fn sample_weights(labels: &[ClassId], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample_weights needs N > 0"));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for N = {n}",
            labels.len()
        )));
    }
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for &y in labels {
        counts[y] += 1;
    }
    Ok(labels
        .iter()
        .map(|&y| counts[y] as f64 / n as f64)
        .collect())
}
