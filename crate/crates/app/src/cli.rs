//! `lesionbench <command> [--config PATH] [--seed N] [--out DIR] ...`

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lesionbench_core::data::{class_stats, clean_dataset, load_manifest, split_dataset, DatasetManifest, Split};
use lesionbench_core::detect::{
    apply_fallback, box_argmax_classify, detect_records, detection_accuracy, save_detection_log, Concurrency,
    DetectionOutcome, DetectorRegistry, OracleDetector, ProcessDetector,
};
use lesionbench_core::ensemble::{ensemble_scores, search_subsets};
use lesionbench_core::metrics::topk_set;
use lesionbench_core::pipeline::{fine_tune, predict_proba, PredictionBatch, TrainedModel};
use lesionbench_core::synthgen::{generate_dataset, MANIFEST_FILE};

use crate::config::{ConfigError, RunConfig};
use crate::report::{build_report, labels_for, stats_table, subsets_table, tables_text, write_bundle};
use crate::server::{self, AppState, DetectorHandle};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lesionbench", version, about = "Skin-lesion classification benchmark tools")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ManifestArg {
    /// Dataset manifest (JSON Lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic lesion dataset.
    Synth {
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        noise_fraction: Option<f64>,
        /// Square image side in pixels.
        #[arg(long)]
        size: Option<u32>,
    },
    /// Print per-class train/test counts.
    Stats {
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Drop records flagged as noise.
    Clean {
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Stratified train/test split.
    Split {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Fine-tune a backbone on the train split.
    Train {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        backbone: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Square input size.
        #[arg(long)]
        size: Option<u32>,
    },
    /// Write class probabilities for a split as a prediction log.
    Predict {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Rank every subset of prediction logs by ensemble accuracy.
    Ensemble {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, num_args = 1..)]
        predictions: Vec<PathBuf>,
    },
    /// Classify a split by the highest-scoring detected box.
    DetectEval {
        #[command(flatten)]
        manifest: ManifestArg,
        /// `oracle` (manifest boxes) or the id of the configured command.
        #[arg(long)]
        detector: Option<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Accuracy tables, confusion heatmap and per-class chart.
    Report {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, num_args = 1..)]
        predictions: Vec<PathBuf>,
    },
    /// Serve a trained model over HTTP.
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Stats { .. } => "stats",
            Command::Clean { .. } => "clean",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Ensemble { .. } => "ensemble",
            Command::DetectEval { .. } => "detect-eval",
            Command::Report { .. } => "report",
            Command::Serve { .. } => "serve",
        }
    }
}

/// Runs one command and returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(&cli, cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.command = cli.command.name().to_string();
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.seed = Some(seed);
        cfg.synth.seed = seed;
        cfg.train.config.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn manifest_path(arg: &ManifestArg, cfg: &RunConfig) -> Result<PathBuf> {
    arg.manifest
        .clone()
        .or_else(|| cfg.paths.manifest.clone())
        .ok_or_else(|| anyhow!(ConfigError::Invalid("no manifest given (--manifest or paths.manifest)".into())))
}

fn read_manifest(arg: &ManifestArg, cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = manifest_path(arg, cfg)?;
    load_manifest(&path).with_context(|| format!("loading {}", path.display()))
}

fn model_dir(arg: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    arg.clone()
        .or_else(|| cfg.paths.model_dir.clone())
        .unwrap_or_else(|| out_dir(cfg).join("model"))
}

/// Saves `manifest` at `path`, making record paths absolute when the
/// manifest moves away from the directory its relative paths refer to.
fn save_manifest_at(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let target_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let same_dir = match manifest.base_dir() {
        Some(base) => same_path(base, &target_dir),
        None => true,
    };
    let moved = if same_dir {
        manifest.clone()
    } else {
        let records = manifest
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                let p = manifest.image_path(&r);
                r.path = fs::canonicalize(&p).unwrap_or(p);
                r
            })
            .collect();
        manifest.with_records(records)
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    moved.save(path).with_context(|| format!("writing {}", path.display()))
}

fn same_path(a: &Path, b: &Path) -> bool {
    let canon = |p: &Path| fs::canonicalize(if p.as_os_str().is_empty() { Path::new(".") } else { p }).ok();
    match (canon(a), canon(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

fn prediction_paths(arg: &[PathBuf], cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let paths = if arg.is_empty() { cfg.paths.predictions.clone() } else { arg.to_vec() };
    if paths.is_empty() {
        bail!(ConfigError::Invalid("no prediction logs given (--predictions or paths.predictions)".into()));
    }
    Ok(paths)
}

fn read_predictions(paths: &[PathBuf]) -> Result<Vec<PredictionBatch>> {
    paths
        .iter()
        .map(|p| PredictionBatch::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn execute(cli: &Cli, mut cfg: RunConfig) -> Result<()> {
    match &cli.command {
        Command::Synth { num_classes, per_class, noise_fraction, size } => {
            let spec = &mut cfg.synth;
            if let Some(c) = num_classes {
                spec.num_classes = *c;
                spec.class_counts = vec![per_class.unwrap_or(spec.class_counts.first().copied().unwrap_or(100)); *c];
            } else if let Some(n) = per_class {
                spec.class_counts = vec![*n; spec.num_classes];
            }
            if let Some(f) = noise_fraction {
                spec.noise_image_fraction = *f;
            }
            if let Some(s) = size {
                spec.image_size = (*s, *s);
            }
            spec.validate().map_err(|e| ConfigError::Invalid(format!("synth: {e}")))?;
            let out = out_dir(&cfg);
            let m = generate_dataset(&cfg.synth, &out)?;
            let noise = m.records.iter().filter(|r| r.noise_flag).count();
            println!(
                "wrote {} images ({} noise) in {} classes to {}",
                m.len(),
                noise,
                m.num_classes(),
                out.join(MANIFEST_FILE).display()
            );
        }
        Command::Stats { manifest } => {
            let m = read_manifest(manifest, &cfg)?;
            let stats = class_stats(&m);
            print!("{}", stats_table(&stats, &m.class_names));
            let unassigned: usize = stats.per_class.iter().map(|c| c.unassigned).sum();
            if unassigned > 0 {
                println!("({unassigned} records not assigned to a split)");
            }
        }
        Command::Clean { manifest } => {
            let m = read_manifest(manifest, &cfg)?;
            let outcome = clean_dataset(&m);
            let path = out_dir(&cfg).join(MANIFEST_FILE);
            save_manifest_at(&outcome.manifest, &path)?;
            println!("removed {} noise records, kept {} -> {}", outcome.removed, outcome.manifest.len(), path.display());
        }
        Command::Split { manifest, test_fraction } => {
            let m = read_manifest(manifest, &cfg)?;
            let frac = test_fraction.unwrap_or(cfg.eval.test_fraction);
            let seed = cfg.seed.unwrap_or(0);
            let split = split_dataset(&m, frac, seed)?;
            let path = out_dir(&cfg).join(MANIFEST_FILE);
            save_manifest_at(&split, &path)?;
            print!("{}", stats_table(&class_stats(&split), &split.class_names));
            println!("-> {}", path.display());
        }
        Command::Train { manifest, backbone, epochs, size } => {
            let m = read_manifest(manifest, &cfg)?;
            if let Some(e) = epochs {
                cfg.train.config.epochs = *e;
            }
            if let Some(s) = size {
                cfg.train.size = Some(*s);
            }
            let backbone = backbone.clone().unwrap_or_else(|| cfg.train.backbone.clone());
            let train_cfg = cfg.train.resolved();
            train_cfg.validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
            let model = fine_tune(&backbone, &m, &train_cfg)?;
            for h in &model.history {
                match h.eval_accuracy {
                    Some(a) => println!("epoch {:>3}  lr {:<8}  loss {:.4}  test top-1 {:.2}%", h.epoch, h.lr, h.loss, a * 100.0),
                    None => println!("epoch {:>3}  lr {:<8}  loss {:.4}", h.epoch, h.lr, h.loss),
                }
            }
            let dir = model_dir(&None, &cfg);
            model.save(&dir)?;
            println!("saved {} to {}", model.model_id, dir.display());
        }
        Command::Predict { manifest, model, split } => {
            let m = read_manifest(manifest, &cfg)?;
            let dir = model_dir(model, &cfg);
            let model = TrainedModel::load(&dir).with_context(|| format!("loading model from {}", dir.display()))?;
            let preds = predict_proba(&model, &m, *split)?;
            let out = out_dir(&cfg);
            fs::create_dir_all(&out)?;
            let path = out.join(format!("predictions-{}.jsonl", model.model_id));
            preds.save(&path)?;
            println!("wrote {} predictions to {}", preds.len(), path.display());
        }
        Command::Ensemble { manifest, predictions } => {
            let m = read_manifest(manifest, &cfg)?;
            cfg.check_k_values(m.num_classes())?;
            let batches = read_predictions(&prediction_paths(predictions, &cfg)?)?;
            let labels = labels_for(&m, &batches[0].sample_ids)?;
            let results = search_subsets(&batches, &labels, &cfg.eval.k_values)?;
            print!("{}", subsets_table(&results));
            let out = out_dir(&cfg);
            fs::create_dir_all(&out)?;
            fs::write(out.join("subsets.json"), serde_json::to_string_pretty(&results)?)?;
            let best: Vec<PredictionBatch> = batches
                .iter()
                .filter(|b| results[0].members.contains(&b.model_id))
                .cloned()
                .collect();
            let mut fused = ensemble_scores(&best)?.normalized()?;
            fused.model_id = results[0].label.clone();
            fused.save(out.join("ensemble.jsonl"))?;
        }
        Command::DetectEval { manifest, detector, split } => {
            let m = read_manifest(manifest, &cfg)?;
            let mut registry = DetectorRegistry::default();
            registry.register("oracle", Arc::new(OracleDetector::from_manifest(&m)));
            if let Some((program, args)) = cfg.detect.command.split_first() {
                let mut p = ProcessDetector::new(program, args.to_vec());
                if cfg.detect.single_invocation {
                    p.concurrency = Concurrency::SingleInvocation;
                }
                registry.register("command", Arc::new(p));
            }
            let mut det_cfg = cfg.detect.config.clone();
            if let Some(d) = detector {
                det_cfg.detector_id = d.clone();
            }
            let records: Vec<_> = m.records_in(*split).collect();
            if records.is_empty() {
                bail!("the {split} split is empty");
            }
            let sets = detect_records(&registry, &m, &records, &det_cfg)?;
            let outcomes: Vec<DetectionOutcome> = sets.iter().map(box_argmax_classify).collect();
            let labels: Vec<usize> = records.iter().map(|r| r.class_id).collect();
            let predicted: Vec<Option<usize>> = if det_cfg.no_detection_fallback {
                let path = cfg
                    .detect
                    .fallback_predictions
                    .clone()
                    .ok_or_else(|| anyhow!(ConfigError::Invalid("no_detection_fallback needs detect.fallback_predictions".into())))?;
                let fb = PredictionBatch::load(&path)?;
                let ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
                if fb.sample_ids.iter().map(String::as_str).ne(ids.iter().copied()) {
                    bail!("fallback predictions do not cover the {split} split in manifest order");
                }
                let top1: Vec<usize> = fb.probs.iter().map(|r| topk_set(r, 1).map(|t| t[0])).collect::<Result<_, _>>()?;
                apply_fallback(&outcomes, &top1)?
            } else {
                outcomes.iter().map(DetectionOutcome::class_id).collect()
            };
            let acc = detection_accuracy(&predicted, &labels, m.num_classes())?;
            let out = out_dir(&cfg);
            fs::create_dir_all(&out)?;
            save_detection_log(&sets, out.join("detections.jsonl"))?;
            fs::write(out.join("detect_eval.json"), serde_json::to_string_pretty(&acc)?)?;
            println!("{}: overall {:.2}%  ({} without detection)", det_cfg.detector_id, acc.overall * 100.0, acc.no_detections);
            for (i, a) in acc.per_class.iter().enumerate() {
                match a {
                    Some(a) => println!("  class {i}: {:.2}%", a * 100.0),
                    None => println!("  class {i}: -"),
                }
            }
        }
        Command::Report { manifest, predictions } => {
            let m = read_manifest(manifest, &cfg)?;
            cfg.check_k_values(m.num_classes())?;
            let batches = read_predictions(&prediction_paths(predictions, &cfg)?)?;
            let bundle = build_report(&m, &batches, &cfg.eval.k_values)?;
            let out = out_dir(&cfg);
            write_bundle(&bundle, &out)?;
            print!("{}", tables_text(&bundle));
            eprintln!("report written to {}", out.display());
        }
        Command::Serve { model, host, port } => {
            let dir = model_dir(model, &cfg);
            let loaded = match TrainedModel::load(&dir) {
                Ok(m) => Some(Arc::new(m)),
                Err(e) => {
                    eprintln!("warning: no model loaded from {}: {e}", dir.display());
                    None
                }
            };
            let detector = cfg.detect.command.split_first().map(|(program, args)| {
                let mut registry = DetectorRegistry::default();
                registry.register("command", Arc::new(ProcessDetector::new(program, args.to_vec())));
                let mut config = cfg.detect.config.clone();
                config.detector_id = "command".into();
                DetectorHandle {
                    registry: Arc::new(registry),
                    config,
                }
            });
            let state = AppState {
                model: loaded,
                detector,
                top_k: cfg.serve.top_k,
            };
            let host = host.clone().unwrap_or_else(|| cfg.serve.host.clone());
            let port = port.unwrap_or(cfg.serve.port);
            let addr = format!("{host}:{port}")
                .parse()
                .map_err(|e| ConfigError::Invalid(format!("bad listen address {host}:{port}: {e}")))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(state, addr, cfg.serve.max_body_bytes))?;
        }
    }
    Ok(())
}
