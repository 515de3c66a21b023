//! Preprocessing, losses, learning-rate schedule and the fine-tuning and
//! prediction harness over registered backbones.

mod loss;
mod net;
mod prediction;
mod schedule;
mod train;
mod transform;

pub use loss::{cross_entropy, focal_loss, softmax, LossKind, PROB_FLOOR};
pub use net::{Architecture, ConvNet};
pub use prediction::PredictionBatch;
pub use schedule::lr_at_epoch;
pub use train::{
    fine_tune, fine_tune_from, fine_tune_with, load_images, predict_proba, BackboneRegistry,
    EpochRecord, LossChoice, TrainedModel, TrainingConfig,
};
pub use transform::{
    build_transform, ImageTensor, Transform, TransformConfig, TransformMode, IMAGENET_MEAN,
    IMAGENET_STD,
};
