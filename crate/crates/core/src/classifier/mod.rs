//! Trainable classifiers: a softmax linear model and a one-hidden-layer tanh
//! network, fitted by mini-batch SGD with momentum on (optionally mixup
//! augmented) cross-entropy, with per-epoch validation snapshots.

mod confusion;
mod mixup;
mod model;
mod train;

pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use mixup::{mixup_batch, sample_beta, MixedSample};
pub use model::{cross_entropy, predict, softmax, Architecture, Model, ModelSpec, MODEL_FORMAT_VERSION};
pub use train::{train, train_with_history, validation_split, EpochStats, TrainConfig, TrainReport};

pub(crate) use train::{check_compatible, fit, Example};
