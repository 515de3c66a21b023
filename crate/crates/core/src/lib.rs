//! Skin-lesion classification benchmark: dataset manifests, a synthetic
//! lesion generator, a fine-tuning harness, ensembling, detection-based
//! classification and top-k evaluation.

pub mod data;
pub mod detect;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
