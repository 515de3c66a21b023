use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{softmax, LossKind};
use super::net::{Architecture, ConvNet};
use super::prediction::PredictionBatch;
use super::schedule::lr_at_epoch;
use super::transform::{build_transform, ImageTensor, TransformConfig, TransformMode};
use crate::data::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::rng::rng_for_index;

const SHUFFLE_STREAM: u64 = 0x7368_7566;
const METADATA_FILE: &str = "metadata.json";
const WEIGHTS_FILE: &str = "weights.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    CrossEntropy,
    Focal,
}

/// Optimization settings. Defaults follow the reference recipe: SGD from
/// lr 0.01, decayed by 0.1 every 10 epochs, batches of 64, 224x224 inputs,
/// cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_period_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// (height, width)
    pub input_size: (u32, u32),
    pub loss: LossChoice,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub seed: u64,
    /// Stop once test accuracy has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
    pub transform: TransformConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            initial_lr: 0.01,
            decay_factor: 0.1,
            decay_period_epochs: 10,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 30,
            input_size: (224, 224),
            loss: LossChoice::CrossEntropy,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            seed: 0,
            early_stop_patience: None,
            transform: TransformConfig::default(),
        }
    }
}

impl TrainingConfig {
    /// Reference recipe at a reduced square input size.
    pub fn with_input_size(size: u32) -> Self {
        TrainingConfig {
            input_size: (size, size),
            transform: TransformConfig::for_size(size),
            ..TrainingConfig::default()
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            LossChoice::CrossEntropy => LossKind::CrossEntropy,
            LossChoice::Focal => LossKind::Focal {
                alpha: self.focal_alpha,
                gamma: self.focal_gamma,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) {
            return Err(Error::invalid("initial_lr must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("decay_factor must be in (0, 1]"));
        }
        if self.decay_period_epochs == 0 {
            return Err(Error::invalid("decay_period_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("momentum must be in [0, 1) and weight_decay >= 0"));
        }
        if self.transform.target != self.input_size {
            return Err(Error::invalid(format!(
                "transform target {:?} differs from input size {:?}",
                self.transform.target, self.input_size
            )));
        }
        self.loss_kind().validate()?;
        self.transform.validate()
    }
}

/// Maps backbone identifiers to network architectures.
#[derive(Clone, Debug)]
pub struct BackboneRegistry {
    archs: BTreeMap<String, Architecture>,
}

impl Default for BackboneRegistry {
    /// Desk-scale stand-ins for the reference backbones; `small-cnn` is the
    /// one used for quick runs.
    fn default() -> Self {
        let mut archs = BTreeMap::new();
        for (id, channels) in [
            ("small-cnn", vec![8, 16, 32]),
            ("resnet50-like", vec![16, 32, 64]),
            ("densenet121-like", vec![12, 24, 48]),
            ("nas-small", vec![8, 16, 32, 48]),
        ] {
            archs.insert(id.to_string(), Architecture { channels });
        }
        BackboneRegistry { archs }
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, id: impl Into<String>, arch: Architecture) {
        self.archs.insert(id.into(), arch);
    }

    pub fn get(&self, id: &str) -> Result<&Architecture> {
        self.archs
            .get(id)
            .ok_or_else(|| Error::UnregisteredBackbone(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.archs.keys().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Top-1 accuracy on the test split, when there is one.
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMetadata {
    model_id: String,
    backbone_id: String,
    num_classes: usize,
    class_names: Vec<String>,
    config: TrainingConfig,
    history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model_id: String,
    pub backbone_id: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub config: TrainingConfig,
    pub history: Vec<EpochRecord>,
    pub net: ConvNet,
}

impl TrainedModel {
    pub fn predict_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let tf = build_transform(&self.config.transform, TransformMode::Eval, self.config.seed)?;
        self.net.predict_proba(&tf.apply(img, 0)?)
    }

    /// Writes `metadata.json` and `weights.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = ModelMetadata {
            model_id: self.model_id.clone(),
            backbone_id: self.backbone_id.clone(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
        };
        let path = dir.join(METADATA_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(WEIGHTS_FILE);
        fs::write(&path, serde_json::to_string(&self.net)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let meta: ModelMetadata = serde_json::from_str(&read(METADATA_FILE)?)?;
        let net: ConvNet = serde_json::from_str(&read(WEIGHTS_FILE)?)?;
        if net.num_classes() != meta.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "weights have {} classes, metadata says {}",
                net.num_classes(),
                meta.num_classes
            )));
        }
        Ok(TrainedModel {
            model_id: meta.model_id,
            backbone_id: meta.backbone_id,
            num_classes: meta.num_classes,
            class_names: meta.class_names,
            config: meta.config,
            history: meta.history,
            net,
        })
    }
}

/// Decodes the images behind `records` as RGB.
pub fn load_images(manifest: &DatasetManifest, records: &[&ImageRecord]) -> Result<Vec<RgbImage>> {
    records
        .par_iter()
        .map(|rec| {
            let path = manifest.image_path(rec);
            image::open(&path)
                .map(|img| img.to_rgb8())
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Trains a freshly initialized `backbone_id` from the default registry.
pub fn fine_tune(backbone_id: &str, manifest: &DatasetManifest, cfg: &TrainingConfig) -> Result<TrainedModel> {
    fine_tune_with(&BackboneRegistry::default(), backbone_id, manifest, cfg)
}

pub fn fine_tune_with(
    registry: &BackboneRegistry,
    backbone_id: &str,
    manifest: &DatasetManifest,
    cfg: &TrainingConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let arch = registry.get(backbone_id)?;
    let c = manifest.num_classes();
    if c < 2 {
        return Err(Error::invalid("fine-tuning needs at least 2 classes"));
    }
    let net = ConvNet::new(arch, 3, c, cfg.seed)?;
    train(backbone_id.to_string(), net, manifest, cfg)
}

/// Continues training from `pretrained`'s body. The head is replaced when
/// the class count differs.
pub fn fine_tune_from(pretrained: &TrainedModel, manifest: &DatasetManifest, cfg: &TrainingConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut net = pretrained.net.clone();
    if net.num_classes() != manifest.num_classes() {
        net.reset_head(manifest.num_classes(), cfg.seed);
    }
    train(pretrained.backbone_id.clone(), net, manifest, cfg)
}

fn train(backbone_id: String, mut net: ConvNet, manifest: &DatasetManifest, cfg: &TrainingConfig) -> Result<TrainedModel> {
    let train_recs: Vec<&ImageRecord> = manifest.records_in(Split::Train).collect();
    if train_recs.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let test_recs: Vec<&ImageRecord> = manifest.records_in(Split::Test).collect();

    let loss = cfg.loss_kind();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs > 0 {
        let train_imgs = load_images(manifest, &train_recs)?;
        let train_tf = build_transform(&cfg.transform, TransformMode::Train, cfg.seed)?;
        let eval_tf = build_transform(&cfg.transform, TransformMode::Eval, cfg.seed)?;
        let test_inputs: Vec<ImageTensor> = load_images(manifest, &test_recs)?
            .par_iter()
            .map(|img| eval_tf.apply(img, 0))
            .collect::<Result<_>>()?;
        let test_labels: Vec<usize> = test_recs.iter().map(|r| r.class_id).collect();

        let n = train_recs.len();
        let mut velocity = vec![0.0; net.num_params()];
        let mut best = f64::NEG_INFINITY;
        let mut since_best = 0;
        for epoch in 0..cfg.epochs {
            let lr = lr_at_epoch(cfg, epoch);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_for_index(cfg.seed, SHUFFLE_STREAM, epoch as u64));

            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let per_sample: Vec<(f64, Vec<f64>)> = batch
                    .par_iter()
                    .map(|&i| {
                        let x = train_tf.apply(&train_imgs[i], (epoch * n + i) as u64)?;
                        let mut g = vec![0.0; net.num_params()];
                        let (l, _) = net.sample_gradient(&x, train_recs[i].class_id, &loss, &mut g)?;
                        Ok((l, g))
                    })
                    .collect::<Result<_>>()?;
                // Summed in batch order so results do not depend on thread timing.
                let mut grad = vec![0.0; net.num_params()];
                for (l, g) in &per_sample {
                    loss_sum += l;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grad) {
                    let g = g * scale + cfg.weight_decay * *p;
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                }
            }

            let eval_accuracy = if test_inputs.is_empty() {
                None
            } else {
                Some(top1_accuracy(&net, &test_inputs, &test_labels)?)
            };
            history.push(EpochRecord {
                epoch,
                lr,
                loss: loss_sum / n as f64,
                eval_accuracy,
            });

            if let (Some(patience), Some(acc)) = (cfg.early_stop_patience, eval_accuracy) {
                if acc > best {
                    best = acc;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        break;
                    }
                }
            }
        }
    }

    Ok(TrainedModel {
        model_id: backbone_id.clone(),
        backbone_id,
        num_classes: manifest.num_classes(),
        class_names: manifest.class_names.clone(),
        config: cfg.clone(),
        history,
        net,
    })
}

fn top1_accuracy(net: &ConvNet, inputs: &[ImageTensor], labels: &[usize]) -> Result<f64> {
    let correct: usize = inputs
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = net.logits(x)?;
            let best = z
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > z[b] { i } else { b });
            Ok(usize::from(best == y))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / inputs.len() as f64)
}

/// Class probabilities for every record of `split`, in manifest order.
pub fn predict_proba(model: &TrainedModel, manifest: &DatasetManifest, split: Split) -> Result<PredictionBatch> {
    if model.num_classes != manifest.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} classes, manifest has {}",
            model.num_classes,
            manifest.num_classes()
        )));
    }
    let recs: Vec<&ImageRecord> = manifest.records_in(split).collect();
    if recs.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let tf = build_transform(&model.config.transform, TransformMode::Eval, model.config.seed)?;
    let probs = load_images(manifest, &recs)?
        .par_iter()
        .map(|img| Ok(softmax(&model.net.logits(&tf.apply(img, 0)?)?)))
        .collect::<Result<Vec<_>>>()?;
    PredictionBatch::new(
        model.model_id.clone(),
        recs.iter().map(|r| r.image_id.clone()).collect(),
        probs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        assert!(TrainingConfig::with_input_size(32).validate().is_ok());
        let bad = [
            TrainingConfig { initial_lr: 0.0, ..TrainingConfig::default() },
            TrainingConfig { decay_factor: 1.5, ..TrainingConfig::default() },
            TrainingConfig { batch_size: 0, ..TrainingConfig::default() },
            TrainingConfig { input_size: (32, 32), ..TrainingConfig::default() },
            TrainingConfig { loss: LossChoice::Focal, focal_alpha: 0.0, ..TrainingConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn registry_lookup() {
        let reg = BackboneRegistry::default();
        assert!(reg.get("small-cnn").is_ok());
        assert!(matches!(reg.get("vgg"), Err(Error::UnregisteredBackbone(_))));
        let net = ConvNet::new(reg.get("small-cnn").unwrap(), 3, 10, 0).unwrap();
        assert!(net.num_params() < 1_000_000);
    }

    #[test]
    fn loss_choice_maps_to_kind() {
        let cfg = TrainingConfig { loss: LossChoice::Focal, ..TrainingConfig::default() };
        assert_eq!(cfg.loss_kind(), LossKind::DETECTOR_FOCAL);
    }
}
