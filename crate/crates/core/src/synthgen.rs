//! Procedural stand-in for a clinical lesion dataset.
//!
//! Each class owns a hue band and a superellipse shape family; a lesion is
//! rendered at a random position and scale over a value-noise skin texture.
//! Every record's randomness is derived from `(seed, image_id)`, and the
//! generative parameters are kept in a [`SynthRecordTruth`] so any image can
//! be re-rendered exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BoundingBox, ClassId, DatasetManifest, ImageRecord};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, rng_for, stable_hash};

/// Superellipse exponents; class `c` uses family `c % len`.
const SHAPE_EXPONENTS: [f64; 4] = [2.0, 4.0, 1.0, 0.7];
/// Share of each class's hue sector actually used, leaving gaps between bands.
const HUE_BAND_SHARE: f64 = 0.5;
const MAX_JITTER: f64 = 0.15;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const IMAGE_DIR: &str = "images";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    /// (height, width) in pixels.
    pub image_size: (u32, u32),
    /// Lesion area as a fraction of the image area, `(min, max)`.
    pub lesion_area_range: (f64, f64),
    pub background_family: u32,
    pub noise_image_fraction: f64,
    pub seed: u64,
    /// Optional display names; `lesion-<c>` when empty.
    pub class_names: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 3,
            class_counts: vec![200, 200, 200],
            image_size: (96, 96),
            lesion_area_range: (0.03, 0.12),
            background_family: 0,
            noise_image_fraction: 0.0,
            seed: 7,
            class_names: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn balanced(num_classes: usize, per_class: usize, seed: u64) -> Self {
        SynthSpec {
            num_classes,
            class_counts: vec![per_class; num_classes],
            seed,
            ..SynthSpec::default()
        }
    }

    /// Long-tailed counts `head * ratio^c`, floored at `min`.
    pub fn long_tailed(num_classes: usize, head: usize, ratio: f64, min: usize, seed: u64) -> Self {
        let class_counts = (0..num_classes)
            .map(|c| ((head as f64 * ratio.powi(c as i32)).round() as usize).max(min))
            .collect();
        SynthSpec {
            num_classes,
            class_counts,
            seed,
            ..SynthSpec::default()
        }
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("synthetic spec needs at least 2 classes"));
        }
        if self.class_counts.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "{} class counts for {} classes",
                self.class_counts.len(),
                self.num_classes
            )));
        }
        if let Some(c) = self.class_counts.iter().position(|&n| n < 2) {
            return Err(Error::invalid(format!("class {c} has fewer than 2 samples")));
        }
        let (lo, hi) = self.lesion_area_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::invalid(format!("lesion area range ({lo}, {hi}) must lie in (0, 1)")));
        }
        if !(0.0..1.0).contains(&self.noise_image_fraction) {
            return Err(Error::invalid("noise_image_fraction must be in [0, 1)"));
        }
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::invalid("images must be at least 16x16"));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return Err(Error::invalid("class_names length must equal num_classes"));
        }
        Ok(())
    }

    pub fn resolved_class_names(&self) -> Vec<String> {
        if self.class_names.is_empty() {
            (0..self.num_classes).map(|c| format!("lesion-{c}")).collect()
        } else {
            self.class_names.clone()
        }
    }

    /// Records flagged as noise: `floor(fraction * total)`.
    pub fn noise_count(&self) -> usize {
        (self.noise_image_fraction * self.total() as f64).floor() as usize
    }
}

/// Hue interval `[lo, hi)` in degrees reserved for a class. Bands of
/// distinct classes never overlap.
pub fn hue_band(class_id: ClassId, num_classes: usize) -> (f64, f64) {
    let sector = 360.0 / num_classes as f64;
    let center = class_id as f64 * sector;
    let half = 0.5 * sector * HUE_BAND_SHARE;
    (center - half, center + half)
}

pub fn shape_family(class_id: ClassId) -> u32 {
    (class_id % SHAPE_EXPONENTS.len()) as u32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterTerm {
    pub amplitude: f64,
    pub frequency: u32,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionParams {
    pub shape_family: u32,
    pub exponent: f64,
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub angle: f64,
    pub jitter: Vec<JitterTerm>,
    /// Degrees; may be negative for the band around red.
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    pub family: u32,
    pub base_rgb: [f64; 3],
    pub texture_seed: u64,
    /// Lattice spacing of the coarsest noise octave, in pixels.
    pub texture_scale: f64,
    pub texture_strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRecordTruth {
    pub image_id: String,
    pub class_id: ClassId,
    pub width: u32,
    pub height: u32,
    /// Tight box around the lesion mask (present even when the lesion is
    /// not drawn).
    pub lesion_box: BoundingBox,
    /// False for noise images, which show background only.
    pub lesion_visible: bool,
    pub lesion: LesionParams,
    pub background: BackgroundParams,
}

/// Ground-truth class of a generated record.
pub fn oracle_label(truth: &SynthRecordTruth) -> ClassId {
    truth.class_id
}

fn image_id_for(index: usize) -> String {
    format!("img_{index:06}")
}

/// Draws every record's generative parameters without rendering pixels.
pub fn plan_dataset(spec: &SynthSpec) -> Result<Vec<SynthRecordTruth>> {
    spec.validate()?;
    let mut classes = Vec::with_capacity(spec.total());
    for (c, &n) in spec.class_counts.iter().enumerate() {
        classes.extend(std::iter::repeat_n(c, n));
    }

    let mut noise = vec![false; classes.len()];
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.shuffle(&mut rng_for(spec.seed, "noise-selection"));
    for &i in order.iter().take(spec.noise_count()) {
        noise[i] = true;
    }

    classes
        .par_iter()
        .enumerate()
        .map(|(i, &c)| plan_record(spec, &image_id_for(i), c, !noise[i]))
        .collect()
}

fn plan_record(spec: &SynthSpec, image_id: &str, class_id: ClassId, visible: bool) -> Result<SynthRecordTruth> {
    let (height, width) = spec.image_size;
    let mut rng = rng_for(spec.seed, image_id);

    let family = shape_family(class_id);
    let exponent = SHAPE_EXPONENTS[family as usize];
    let (lo, hi) = spec.lesion_area_range;
    let area_frac = rng.random_range(lo..=hi);
    let aspect: f64 = rng.random_range(0.7..1.4);
    // Superellipse area depends on the exponent; the circle approximation
    // is close enough for a size knob.
    let area = area_frac * width as f64 * height as f64;
    let mut rx = (area / std::f64::consts::PI * aspect).sqrt();
    let mut ry = area / std::f64::consts::PI / rx;

    let n_terms = rng.random_range(2..=4);
    let jitter: Vec<JitterTerm> = (0..n_terms)
        .map(|_| JitterTerm {
            amplitude: rng.random_range(0.0..MAX_JITTER / n_terms as f64),
            frequency: rng.random_range(2..=7),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let amp: f64 = jitter.iter().map(|t| t.amplitude).sum();

    let min_side = width.min(height) as f64;
    let reach = |rx: f64, ry: f64| rx.hypot(ry) * (1.0 + amp);
    let limit = 0.5 * min_side - 3.0;
    if reach(rx, ry) > limit {
        let s = limit / reach(rx, ry);
        rx *= s;
        ry *= s;
    }
    rx = rx.max(2.0);
    ry = ry.max(2.0);
    let r = reach(rx, ry);
    let cx = rng.random_range(r + 2.0..=width as f64 - r - 2.0);
    let cy = rng.random_range(r + 2.0..=height as f64 - r - 2.0);
    let angle = rng.random_range(0.0..std::f64::consts::PI);

    let (hlo, hhi) = hue_band(class_id, spec.num_classes);
    let lesion = LesionParams {
        shape_family: family,
        exponent,
        center: (cx, cy),
        radii: (rx, ry),
        angle,
        jitter,
        hue: rng.random_range(hlo..hhi),
        saturation: rng.random_range(0.55..0.85),
        value: rng.random_range(0.45..0.8),
    };

    let palette = skin_palette(spec.background_family);
    let base = palette[rng.random_range(0..palette.len())];
    let shade: f64 = rng.random_range(0.92..1.08);
    let background = BackgroundParams {
        family: spec.background_family,
        base_rgb: [
            (base[0] * shade).min(255.0),
            (base[1] * shade).min(255.0),
            (base[2] * shade).min(255.0),
        ],
        texture_seed: rng.random(),
        texture_scale: rng.random_range(8.0..20.0),
        texture_strength: rng.random_range(0.15..0.3),
    };

    let lesion_box = mask_box(&lesion, width, height, class_id)?;
    Ok(SynthRecordTruth {
        image_id: image_id.to_string(),
        class_id,
        width,
        height,
        lesion_box,
        lesion_visible: visible,
        lesion,
        background,
    })
}

fn skin_palette(family: u32) -> &'static [[f64; 3]] {
    match family % 3 {
        0 => &[[226.0, 185.0, 160.0], [214.0, 170.0, 140.0], [235.0, 200.0, 178.0]],
        1 => &[[176.0, 128.0, 96.0], [160.0, 112.0, 82.0], [190.0, 142.0, 108.0]],
        _ => &[[120.0, 84.0, 62.0], [104.0, 72.0, 52.0], [138.0, 98.0, 72.0]],
    }
}

/// Whether pixel center `(x + 0.5, y + 0.5)` lies inside the lesion.
pub fn lesion_contains(lesion: &LesionParams, x: u32, y: u32) -> bool {
    let dx = x as f64 + 0.5 - lesion.center.0;
    let dy = y as f64 + 0.5 - lesion.center.1;
    let (s, c) = lesion.angle.sin_cos();
    let u = (dx * c + dy * s) / lesion.radii.0;
    let v = (-dx * s + dy * c) / lesion.radii.1;
    let p = lesion.exponent;
    let r = (u.abs().powf(p) + v.abs().powf(p)).powf(1.0 / p);
    let theta = v.atan2(u);
    let boundary = 1.0
        + lesion
            .jitter
            .iter()
            .map(|t| t.amplitude * (t.frequency as f64 * theta + t.phase).sin())
            .sum::<f64>();
    r <= boundary
}

fn mask_box(lesion: &LesionParams, width: u32, height: u32, class_id: ClassId) -> Result<BoundingBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..height {
        for x in 0..width {
            if lesion_contains(lesion, x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == u32::MAX {
        let (cx, cy) = (lesion.center.0 as u32, lesion.center.1 as u32);
        return BoundingBox::new(cx, cy, cx + 1, cy + 1, class_id);
    }
    BoundingBox::new(x0, y0, x1, y1, class_id)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let key = mix_seed(seed, stable_hash(&[ix.to_le_bytes(), iy.to_le_bytes()].concat()));
    (key >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Three-octave fractal noise in `[0, 1]`.
fn texture(bg: &BackgroundParams, x: u32, y: u32) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut amp = 1.0;
    let mut scale = bg.texture_scale;
    for octave in 0..3u64 {
        total += amp * value_noise(bg.texture_seed ^ octave, x as f64 / scale, y as f64 / scale);
        weight += amp;
        amp *= 0.5;
        scale *= 0.5;
    }
    total / weight
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders the image described by `truth`. Noise records show background only.
pub fn render_image(truth: &SynthRecordTruth) -> RgbImage {
    let bg = &truth.background;
    let lesion_rgb = hsv_to_rgb(truth.lesion.hue, truth.lesion.saturation, truth.lesion.value);
    RgbImage::from_fn(truth.width, truth.height, |x, y| {
        let t = texture(bg, x, y);
        let shade = 1.0 + bg.texture_strength * (2.0 * t - 1.0);
        if truth.lesion_visible && lesion_contains(&truth.lesion, x, y) {
            let ls = 0.9 + 0.2 * t;
            Rgb([
                to_u8(lesion_rgb[0] * ls),
                to_u8(lesion_rgb[1] * ls),
                to_u8(lesion_rgb[2] * ls),
            ])
        } else {
            Rgb([
                to_u8(bg.base_rgb[0] * shade),
                to_u8(bg.base_rgb[1] * shade),
                to_u8(bg.base_rgb[2] * shade),
            ])
        }
    })
}

/// Manifest records for planned truths, with paths relative to the output
/// directory.
pub fn manifest_for(spec: &SynthSpec, truths: &[SynthRecordTruth]) -> Result<DatasetManifest> {
    let records = truths
        .iter()
        .map(|t| {
            let mut rec = ImageRecord::new(
                t.image_id.clone(),
                PathBuf::from(IMAGE_DIR).join(format!("{}.png", t.image_id)),
                t.class_id,
            );
            rec.noise_flag = !t.lesion_visible;
            if t.lesion_visible {
                rec.boxes.push(t.lesion_box);
            }
            rec
        })
        .collect();
    DatasetManifest::new(spec.resolved_class_names(), records)
}

/// Writes `images/*.png`, `manifest.jsonl` and `truth.jsonl` under `out_dir`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    generate_with_truth(spec, out_dir).map(|(m, _)| m)
}

pub fn generate_with_truth(
    spec: &SynthSpec,
    out_dir: impl AsRef<Path>,
) -> Result<(DatasetManifest, Vec<SynthRecordTruth>)> {
    let out_dir = out_dir.as_ref();
    let truths = plan_dataset(spec)?;
    let image_dir = out_dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    truths.par_iter().try_for_each(|t| {
        let path = image_dir.join(format!("{}.png", t.image_id));
        render_image(t)
            .save(&path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    })?;

    let manifest = manifest_for(spec, &truths)?.with_base_dir(out_dir);
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    save_truths(&truths, out_dir.join(TRUTH_FILE))?;
    Ok((manifest, truths))
}

pub fn save_truths(truths: &[SynthRecordTruth], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for t in truths {
        serde_json::to_writer(&mut buf, t)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_truths(path: impl AsRef<Path>) -> Result<Vec<SynthRecordTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        let mut s = SynthSpec::balanced(1, 10, 0);
        assert!(s.validate().is_err());
        s = SynthSpec::balanced(3, 10, 0);
        s.class_counts[1] = 1;
        assert!(s.validate().is_err());
        s = SynthSpec::balanced(3, 10, 0);
        s.noise_image_fraction = 1.0;
        assert!(s.validate().is_err());
        s = SynthSpec::balanced(3, 10, 0);
        s.lesion_area_range = (0.2, 0.1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn hue_bands_are_disjoint() {
        for c in 2..12 {
            let bands: Vec<_> = (0..c).map(|k| hue_band(k, c)).collect();
            for w in bands.windows(2) {
                assert!(w[0].1 < w[1].0);
            }
            assert!(bands[c - 1].1 < bands[0].0 + 360.0);
        }
    }

    #[test]
    fn noise_count_floors() {
        let mut s = SynthSpec::balanced(2, 100, 1);
        s.noise_image_fraction = 0.1;
        assert_eq!(s.noise_count(), 20);
        s.class_counts = vec![100, 99];
        assert_eq!(s.noise_count(), 19);
    }

    #[test]
    fn long_tail_profile() {
        let s = SynthSpec::long_tailed(5, 100, 0.5, 4, 0);
        assert_eq!(s.class_counts, vec![100, 50, 25, 13, 6]);
    }

    #[test]
    fn boxes_are_strictly_inside() {
        let mut s = SynthSpec::balanced(4, 10, 3);
        s.lesion_area_range = (0.1, 0.3);
        for t in plan_dataset(&s).unwrap() {
            let b = t.lesion_box;
            assert!(b.xmin >= 1 && b.ymin >= 1);
            assert!(b.xmax < t.width && b.ymax < t.height);
        }
    }

    #[test]
    fn oracle_label_is_generation_class() {
        let truths = plan_dataset(&SynthSpec::balanced(3, 4, 11)).unwrap();
        for t in &truths {
            assert_eq!(oracle_label(t), t.class_id);
        }
        assert!(truths[..4].iter().all(|t| oracle_label(t) == 0));
    }
}
