//! Image preprocessing: resize, random crop, flips, rotation, normalization.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for_index;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

const TRANSFORM_STREAM: u64 = 0x7472_616e_7366;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    /// Output (height, width).
    pub target: (u32, u32),
    pub random_crop: bool,
    /// Train-mode resize before cropping to `target`.
    pub pre_resize: (u32, u32),
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Rotation drawn uniformly from `[-deg, deg]`.
    pub rotation_degrees: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            target: (224, 224),
            random_crop: true,
            pre_resize: (256, 256),
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rotation_degrees: 30.0,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl TransformConfig {
    /// Default augmentation scaled to a square `size`, keeping the
    /// 256 -> 224 pre-resize ratio.
    pub fn for_size(size: u32) -> Self {
        let pre = ((size as f64) * 256.0 / 224.0).round() as u32;
        TransformConfig {
            target: (size, size),
            pre_resize: (pre, pre),
            ..TransformConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.target;
        if h == 0 || w == 0 {
            return Err(Error::invalid("transform target size must be positive"));
        }
        for p in [self.hflip_prob, self.vflip_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("flip probability {p} outside [0, 1]")));
            }
        }
        if self.random_crop && (self.pre_resize.0 < h || self.pre_resize.1 < w) {
            return Err(Error::invalid("pre-resize must be at least the target size"));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("normalization std must be positive"));
        }
        if !(self.rotation_degrees >= 0.0) {
            return Err(Error::invalid("rotation range must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    Train,
    Eval,
}

/// Channel-major float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut t = ImageTensor::zeros(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                t.data[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
            }
        }
        t
    }
}

#[derive(Clone, Debug)]
pub struct Transform {
    cfg: TransformConfig,
    mode: TransformMode,
    seed: u64,
}

pub fn build_transform(cfg: &TransformConfig, mode: TransformMode, seed: u64) -> Result<Transform> {
    cfg.validate()?;
    Ok(Transform {
        cfg: cfg.clone(),
        mode,
        seed,
    })
}

impl Transform {
    pub fn mode(&self) -> TransformMode {
        self.mode
    }

    pub fn config(&self) -> &TransformConfig {
        &self.cfg
    }

    /// Eval mode ignores `sample_index`; train mode draws its augmentation
    /// from `(seed, sample_index)` only.
    pub fn apply(&self, img: &RgbImage, sample_index: u64) -> Result<ImageTensor> {
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Image("image is smaller than 1x1".into()));
        }
        let (th, tw) = self.cfg.target;
        let mut t = match self.mode {
            TransformMode::Eval => ImageTensor::from_rgb(&resize(img, tw, th)),
            TransformMode::Train => {
                let mut rng = rng_for_index(self.seed, TRANSFORM_STREAM, sample_index);
                let img = if self.cfg.random_crop {
                    let (ph, pw) = self.cfg.pre_resize;
                    let big = resize(img, pw, ph);
                    let x0 = rng.random_range(0..=pw - tw);
                    let y0 = rng.random_range(0..=ph - th);
                    imageops::crop_imm(&big, x0, y0, tw, th).to_image()
                } else {
                    resize(img, tw, th)
                };
                let mut img = img;
                if rng.random_bool(self.cfg.hflip_prob) {
                    imageops::flip_horizontal_in_place(&mut img);
                }
                if rng.random_bool(self.cfg.vflip_prob) {
                    imageops::flip_vertical_in_place(&mut img);
                }
                let t = ImageTensor::from_rgb(&img);
                let deg = self.cfg.rotation_degrees;
                if deg > 0.0 {
                    rotate(&t, rng.random_range(-deg..=deg).to_radians())
                } else {
                    t
                }
            }
        };
        normalize(&mut t, &self.cfg.mean, &self.cfg.std);
        Ok(t)
    }
}

fn resize(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    if img.dimensions() == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, w, h, FilterType::Triangle)
    }
}

/// Bilinear rotation about the image center; uncovered pixels become 0.
fn rotate(t: &ImageTensor, radians: f64) -> ImageTensor {
    let (c, h, w) = t.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    let (s, co) = radians.sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = co * dx + s * dy + cx;
            let sy = -s * dx + co * dy + cy;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let top = t.at(ch, y0, x0) * (1.0 - fx) + t.at(ch, y0, x1) * fx;
                let bottom = t.at(ch, y1, x0) * (1.0 - fx) + t.at(ch, y1, x1) * fx;
                out.data[(ch * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn normalize(t: &mut ImageTensor, mean: &[f64; 3], std: &[f64; 3]) {
    let plane = t.height * t.width;
    for (c, chunk) in t.data.chunks_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v - mean[c]) / std[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 3 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn eval_output_has_target_shape() {
        let tf = build_transform(&TransformConfig::default(), TransformMode::Eval, 0).unwrap();
        for (w, h) in [(1, 1), (50, 300), (640, 480)] {
            let t = tf.apply(&gradient_image(w, h), 0).unwrap();
            assert_eq!(t.shape(), (3, 224, 224));
        }
    }

    #[test]
    fn constant_image_normalizes_per_channel() {
        let img = RgbImage::from_pixel(37, 19, Rgb([200, 100, 50]));
        let cfg = TransformConfig::for_size(16);
        let t = build_transform(&cfg, TransformMode::Eval, 0).unwrap().apply(&img, 0).unwrap();
        for (c, v) in [200.0, 100.0, 50.0].iter().enumerate() {
            let expected = (v / 255.0 - cfg.mean[c]) / cfg.std[c];
            for y in 0..16 {
                for x in 0..16 {
                    assert!((t.at(c, y, x) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn train_mode_is_deterministic_per_index() {
        let cfg = TransformConfig::for_size(32);
        let tf = build_transform(&cfg, TransformMode::Train, 99).unwrap();
        let img = gradient_image(80, 60);
        assert_eq!(tf.apply(&img, 5).unwrap(), tf.apply(&img, 5).unwrap());
        assert_ne!(tf.apply(&img, 5).unwrap(), tf.apply(&img, 6).unwrap());
        assert_eq!(tf.apply(&img, 5).unwrap().shape(), (3, 32, 32));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = TransformConfig::default();
        cfg.hflip_prob = 1.5;
        assert!(build_transform(&cfg, TransformMode::Train, 0).is_err());
        let mut cfg = TransformConfig::default();
        cfg.pre_resize = (100, 100);
        assert!(cfg.validate().is_err());
        let mut cfg = TransformConfig::default();
        cfg.target = (0, 10);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_image_is_an_error() {
        let tf = build_transform(&TransformConfig::default(), TransformMode::Eval, 0).unwrap();
        assert!(matches!(tf.apply(&RgbImage::new(0, 0), 0), Err(Error::Image(_))));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let t = ImageTensor::from_rgb(&gradient_image(9, 7));
        let r = rotate(&t, 0.0);
        for (a, b) in t.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
