//! Clean-sample selection for datasets with noisy labels.
//!
//! The crate implements ensemble noise-robust K-fold cross-validation
//! selection (E-NKCVS): every sample is predicted by a model that never saw
//! it during training, repeated over `M` independent fold splits, and kept
//! when its observed label was reproduced at least `t` times. Samples that
//! are not kept get an entropy-weighted pseudo label for final retraining.
//!
//! Alongside the algorithm the crate ships the closed-form expected
//! precision/recall of the selector and a Monte Carlo simulator of the same
//! generative model, so the two can be checked against each other.
//!
//! Module map:
//!
//! * [`datamodel`]: samples, CSV ingestion, synthetic blobs, K-fold splits
//! * [`noise`]: transition matrices and label corruption
//! * [`classifier`]: softmax / one-hidden-layer models, SGD with mixup
//! * [`selection`]: NKCVS and E-NKCVS
//! * [`reweight`]: label profiles, composite loss, retraining
//! * [`theory`]: closed-form and Monte Carlo precision/recall
//! * [`evaluation`]: selection metrics, accuracy, parameter sweeps

pub mod classifier;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod noise;
pub mod reweight;
pub mod rng;
pub mod selection;
pub mod theory;

pub use classifier::{
    confusion_matrix, cross_entropy, mixup_batch, predict, train, Architecture, ConfusionMatrix,
    MixedSample, Model, ModelSpec, TrainConfig,
};
pub use datamodel::{generate_blobs, kfold_split, load_csv, CsvSchema, FoldAssignment, LabeledDataset, LabeledSample};
pub use error::{Error, Result};
pub use evaluation::{selection_metrics, sweep, test_accuracy, SelectionMetrics, SweepGrid, SweepRecord};
pub use matrix::StochasticMatrix;
pub use noise::{asymmetric_transition, inject, symmetric_transition, NoiseKind, NoiseModel};
pub use reweight::{composite_loss, label_profile, retrain, LabelProfile};
pub use selection::{enkcvs, nkcvs, IterationRecord, SelectionConfig, SelectionOutcome};
pub use theory::{closed_form, corollary_symmetric, monte_carlo, FormulaMode, TheoryInputs, TheoryResult};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
