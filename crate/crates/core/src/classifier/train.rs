use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mixup::mixup_batch;
use super::model::{Model, ModelSpec};
use crate::datamodel::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Beta parameter for mixup; 0 disables augmentation.
    pub mixup_alpha: f64,
    /// Fraction of the data held out to pick the best epoch.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            mixup_alpha: 0.3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be >= 0");
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return fail("mixup_alpha must be >= 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must be in (0, 1)");
        }
        Ok(())
    }

    /// The same configuration with a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Weighted objective on the training split, without augmentation.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Snapshot with the highest validation accuracy (earliest on ties).
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// One training target: a sample, a label distribution and a loss weight.
#[derive(Debug, Clone)]
pub(crate) struct Example {
    pub index: usize,
    pub target: Vec<f64>,
    pub weight: f64,
    pub augment: bool,
}

pub(crate) fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

/// Seeded split of `0..n` into (train, validation), both ascending.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((fraction * n as f64).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::EmptyTrainingSplit);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::VALIDATION]));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub(crate) fn check_compatible(dataset: &LabeledDataset, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if spec.input_dim != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: dataset.dim(),
        });
    }
    if spec.num_classes != dataset.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_classes,
            actual: dataset.num_classes(),
        });
    }
    Ok(())
}

/// Fits a fresh model to the observed labels. Holds out `val_fraction` of the
/// data and returns the epoch snapshot with the best held-out accuracy.
pub fn train(dataset: &LabeledDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<Model> {
    train_with_history(dataset, spec, cfg).map(|r| r.model)
}

pub fn train_with_history(dataset: &LabeledDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(dataset, spec)?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let (train_idx, val_idx) = validation_split(dataset.len(), cfg.val_fraction, cfg.seed)?;
    let q = dataset.num_classes();
    let augment = cfg.mixup_alpha > 0.0;
    let examples: Vec<Example> = train_idx
        .iter()
        .map(|&i| Example {
            index: i,
            target: one_hot(dataset.samples()[i].observed_label, q),
            weight: 1.0,
            augment,
        })
        .collect();
    fit(dataset, &examples, &val_idx, spec, cfg)
}

/// Mini-batch SGD with momentum and L2 weight decay. The batch objective is
/// `(1/B) * sum_i weight_i * CE(f(x_i), target_i)`; augmented examples are
/// mixed only with other augmented examples of the same batch.
pub(crate) fn fit(
    dataset: &LabeledDataset,
    examples: &[Example],
    validation: &[usize],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }
    let samples = dataset.samples();
    let mut model = Model::init(spec.clone(), cfg.seed)?;
    let n_params = model.weights().len();
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut best: Option<(f64, usize, Model)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, &[tag::EPOCH, epoch as u64]);
        order.shuffle(&mut r);
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;

            let (augmented, plain): (Vec<&Example>, Vec<&Example>) =
                chunk.iter().map(|&i| &examples[i]).partition(|e| e.augment);
            if !augmented.is_empty() {
                let pairs: Vec<(&[f64], &[f64])> = augmented
                    .iter()
                    .map(|e| (samples[e.index].features.as_slice(), e.target.as_slice()))
                    .collect();
                let mixed = mixup_batch(&pairs, cfg.mixup_alpha, &mut r)?;
                for (e, m) in augmented.iter().zip(&mixed) {
                    let w = e.weight * scale;
                    batch_loss += w * model.accumulate_gradient(&m.features, &m.soft_label, w, &mut grad);
                }
            }
            for e in plain {
                let w = e.weight * scale;
                batch_loss += w * model.accumulate_gradient(&samples[e.index].features, &e.target, w, &mut grad);
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }

            let weights = model.weights_mut();
            for ((w, v), g) in weights.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g + cfg.weight_decay * *w;
                *w -= cfg.learning_rate * *v;
            }
        }

        let train_loss = examples
            .iter()
            .map(|e| {
                let p = model.probabilities(&samples[e.index].features);
                e.weight * super::model::cross_entropy(&p, &e.target).unwrap_or(f64::NAN)
            })
            .sum::<f64>()
            / examples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let val_accuracy = accuracy_on(&model, dataset, validation);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainReport {
        model,
        best_epoch,
        history,
    })
}

/// Accuracy against observed labels on the samples at `indices`.
pub(crate) fn accuracy_on(model: &Model, dataset: &LabeledDataset, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let hits = indices
        .iter()
        .filter(|&&i| {
            let s = &dataset.samples()[i];
            model.predict_label(&s.features) == s.observed_label
        })
        .count();
    hits as f64 / indices.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{generate_blobs, LabeledSample};

    #[test]
    fn split_sizes() {
        let (t, v) = validation_split(100, 0.1, 3).unwrap();
        assert_eq!((t.len(), v.len()), (90, 10));
        assert!(t.iter().all(|i| !v.contains(i)));
        assert!(matches!(validation_split(1, 0.1, 3), Err(Error::EmptyTrainingSplit)));
    }

    #[test]
    fn single_class_dataset() {
        let samples = (0..400)
            .map(|id| LabeledSample {
                id,
                features: vec![id as f64 / 100.0 - 2.0, (id % 3) as f64],
                observed_label: 2,
                true_label: None,
            })
            .collect();
        let ds = LabeledDataset::new(samples, 3, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let model = train(&ds, &ModelSpec::linear(2, 3), &cfg).unwrap();
        for s in ds.samples() {
            assert_eq!(model.predict_label(&s.features), 2);
        }
    }

    #[test]
    fn separable_blobs_reach_high_validation_accuracy() {
        let ds = generate_blobs(4, 2000, 10, 10.0, 1).unwrap();
        let report = train_with_history(&ds, &ModelSpec::linear(10, 4), &TrainConfig::default()).unwrap();
        let best = report.history[report.best_epoch].val_accuracy;
        assert!(best >= 0.99, "validation accuracy {best}");
    }

    #[test]
    fn deterministic() {
        let ds = generate_blobs(3, 300, 4, 2.0, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        for spec in [ModelSpec::linear(4, 3), ModelSpec::one_hidden(4, 3, 6)] {
            let a = train(&ds, &spec, &cfg).unwrap();
            let b = train(&ds, &spec, &cfg).unwrap();
            assert!(a.weights().iter().zip(b.weights()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn full_batch_small_step_loss_does_not_increase() {
        let ds = generate_blobs(3, 200, 4, 1.5, 6).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 1000,
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            mixup_alpha: 0.0,
            ..Default::default()
        };
        for spec in [ModelSpec::linear(4, 3), ModelSpec::one_hidden(4, 3, 5)] {
            let report = train_with_history(&ds, &spec, &cfg).unwrap();
            for pair in report.history.windows(2) {
                assert!(pair[1].train_loss <= pair[0].train_loss + 1e-15, "{pair:?}");
            }
        }
    }

    #[test]
    fn diverging_training_is_reported() {
        let ds = generate_blobs(2, 100, 2, 1.0, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            momentum: 0.0,
            mixup_alpha: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            train(&ds, &ModelSpec::linear(2, 2), &cfg),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn rejects_mismatched_spec() {
        let ds = generate_blobs(2, 100, 2, 1.0, 0).unwrap();
        assert!(train(&ds, &ModelSpec::linear(3, 2), &TrainConfig::default()).is_err());
        assert!(train(&ds, &ModelSpec::linear(2, 3), &TrainConfig::default()).is_err());
    }
}
