//! On-disk run configuration: one TOML file with a section per command.

use std::path::{Path, PathBuf};

use lesionbench_core::data::DEFAULT_TEST_FRACTION;
use lesionbench_core::detect::DetectorConfig;
use lesionbench_core::pipeline::{TrainingConfig, TransformConfig};
use lesionbench_core::synthgen::SynthSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Prediction logs consumed by `ensemble` and `report`.
    pub predictions: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub backbone: String,
    /// Square input size; also rescales the augmentation sizes.
    pub size: Option<u32>,
    #[serde(flatten)]
    pub config: TrainingConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            backbone: "small-cnn".into(),
            size: None,
            config: TrainingConfig::default(),
        }
    }
}

impl TrainSection {
    /// The training config with `size` applied.
    pub fn resolved(&self) -> TrainingConfig {
        let mut cfg = self.config.clone();
        if let Some(n) = self.size {
            let scaled = TransformConfig::for_size(n);
            cfg.input_size = (n, n);
            cfg.transform.target = scaled.target;
            cfg.transform.pre_resize = scaled.pre_resize;
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectSection {
    #[serde(flatten)]
    pub config: DetectorConfig,
    /// External detector: program followed by its arguments.
    pub command: Vec<String>,
    /// Run the external detector one image at a time.
    pub single_invocation: bool,
    /// Prediction log used when `no_detection_fallback` is on.
    pub fallback_predictions: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k_values: Vec<usize>,
    pub test_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k_values: vec![1, 3],
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub max_body_bytes: usize,
    pub top_k: usize,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            host: "127.0.0.1".into(),
            port: 8080,
            max_body_bytes: 8 * 1024 * 1024,
            top_k: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip)]
    pub command: String,
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthSpec,
    pub train: TrainSection,
    pub detect: DetectSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Invalid(message) => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not need the dataset. `k_values <= C` is checked once
    /// the class count is known.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if self.eval.k_values.is_empty() || self.eval.k_values.contains(&0) {
            return Err(invalid("eval.k_values must be non-empty and positive".into()));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(invalid("eval.test_fraction must be in (0, 1)".into()));
        }
        if self.serve.top_k == 0 {
            return Err(invalid("serve.top_k must be positive".into()));
        }
        self.train.resolved().validate().map_err(|e| invalid(format!("train: {e}")))?;
        self.detect.config.validate().map_err(|e| invalid(format!("detect: {e}")))?;
        Ok(())
    }

    pub fn check_k_values(&self, num_classes: usize) -> Result<(), ConfigError> {
        match self.eval.k_values.iter().find(|&&k| k > num_classes) {
            Some(k) => Err(ConfigError::Invalid(format!(
                "k = {k} exceeds the {num_classes} classes of the dataset"
            ))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.train.backbone, "small-cnn");
        assert_eq!(cfg.eval.k_values, vec![1, 3]);
        assert_eq!(cfg.train.resolved(), TrainingConfig::default());
    }

    #[test]
    fn sections_are_read() {
        let cfg = RunConfig::parse(
            r#"
            seed = 5
            [paths]
            manifest = "data/manifest.jsonl"
            [synth]
            num_classes = 4
            class_counts = [10, 10, 10, 10]
            [train]
            backbone = "nas-small"
            size = 32
            epochs = 3
            [detect]
            score_threshold = 0.3
            command = ["./detector", "--fast"]
            [eval]
            k_values = [1, 2]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(5));
        assert_eq!(cfg.synth.num_classes, 4);
        let train = cfg.train.resolved();
        assert_eq!((train.input_size, train.transform.pre_resize, train.epochs), ((32, 32), (37, 37), 3));
        assert_eq!(cfg.detect.config.score_threshold, 0.3);
        assert_eq!(cfg.detect.command.len(), 2);
        assert!(cfg.check_k_values(2).is_ok());
        assert!(cfg.check_k_values(1).is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::parse("[eval]\nk_values = [0]").is_err());
        assert!(RunConfig::parse("[detect]\nscore_threshold = 1.0").is_err());
        assert!(RunConfig::parse("[train]\ninput_size = [32, 32]").is_err());
        assert!(RunConfig::parse("[mystery]\nx = 1").is_err());
        assert!(RunConfig::parse("[eval]\ntest_fraction = 1.5").is_err());
    }
}
