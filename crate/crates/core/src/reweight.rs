//! Entropy-weighted pseudo labels for samples the selector rejected.
//!
//! Each sample's `M` ensemble predictions form a distribution `P`. Its modal
//! class is the pseudo label and `beta = H(P) / ln Q` measures how unsure the
//! ensemble was. A rejected sample contributes
//! `beta * CE(x, y) + (1 - beta) * CE(x, pseudo)`, down-weighted by `gamma`,
//! next to the plain loss of the selected samples.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{cross_entropy, fit, train, validation_split, Example, Model, ModelSpec, TrainConfig};
use crate::datamodel::LabeledDataset;
use crate::error::{Error, Result};
use crate::selection::SelectionOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProfile {
    pub distribution: Vec<f64>,
    /// Natural-log entropy of `distribution`.
    pub entropy: f64,
    pub beta: f64,
    pub pseudo_label: usize,
}

impl LabelProfile {
    /// `beta * e_observed + (1 - beta) * e_pseudo`. The re-weighted loss is
    /// cross-entropy against this target, since cross-entropy is linear in
    /// the target.
    pub fn blended_target(&self, observed: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.distribution.len()];
        t[observed] += self.beta;
        t[self.pseudo_label] += 1.0 - self.beta;
        t
    }
}

/// Summarizes `M` predictions. The pseudo label is the modal class; ties
/// prefer `given_label` when it is modal, else the lowest class index.
pub fn label_profile(predictions: &[usize], given_label: usize, num_classes: usize) -> Result<LabelProfile> {
    if predictions.is_empty() {
        return Err(Error::invalid("label profile needs at least one prediction"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("label profile needs at least 2 classes"));
    }
    if given_label >= num_classes {
        return Err(Error::invalid(format!("given label {given_label} outside 0..{num_classes}")));
    }
    let mut counts = vec![0usize; num_classes];
    for &p in predictions {
        if p >= num_classes {
            return Err(Error::invalid(format!("prediction {p} outside 0..{num_classes}")));
        }
        counts[p] += 1;
    }
    let m = predictions.len() as f64;
    let distribution: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let entropy = distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>();

    let support = counts.iter().filter(|&&c| c > 0).count();
    let beta = if support == 1 {
        0.0
    } else if support == num_classes && counts.iter().all(|&c| c == counts[0]) {
        1.0
    } else {
        (entropy / (num_classes as f64).ln()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    };

    let top = *counts.iter().max().expect("non-empty");
    let pseudo_label = if counts[given_label] == top {
        given_label
    } else {
        counts.iter().position(|&c| c == top).expect("max exists")
    };
    Ok(LabelProfile {
        distribution,
        entropy: if support == 1 { 0.0 } else { entropy },
        beta,
        pseudo_label,
    })
}

/// Profiles for every sample of a selection outcome.
pub fn profiles(outcome: &SelectionOutcome, num_classes: usize) -> Result<Vec<LabelProfile>> {
    (0..outcome.len())
        .into_par_iter()
        .map(|s| label_profile(&outcome.predictions_of(s), outcome.observed_labels()[s], num_classes))
        .collect()
}

/// Per-sample (target, weight) so that the full-data composite loss is
/// `sum_s weight_s * CE(f(x_s), target_s)`.
fn composite_terms(
    dataset: &LabeledDataset,
    selected: &[bool],
    profiles: &[LabelProfile],
    gamma: f64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = dataset.len();
    if selected.len() != n || profiles.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: selected.len().min(profiles.len()),
        });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma {gamma} must be >= 0")));
    }
    let n_sel = selected.iter().filter(|&&s| s).count();
    let n_rest = n - n_sel;
    if n_sel == 0 {
        warn!("no selected samples; the selected-sample term is dropped");
    }
    let q = dataset.num_classes();
    Ok(dataset
        .samples()
        .iter()
        .zip(selected)
        .zip(profiles)
        .map(|((s, &sel), profile)| {
            if sel {
                let mut t = vec![0.0; q];
                t[s.observed_label] = 1.0;
                (t, 1.0 / n_sel as f64)
            } else {
                (profile.blended_target(s.observed_label), gamma / n_rest as f64)
            }
        })
        .collect())
}

/// The complete training objective over the whole dataset:
/// `(1/|SS|) sum_{SS} CE(x, y) + gamma/(|D| - |SS|) sum_{not SS} [beta CE(x, y) + (1 - beta) CE(x, pseudo)]`.
/// An empty selected or rejected set drops its term.
pub fn composite_loss(
    model: &Model,
    dataset: &LabeledDataset,
    selected: &[bool],
    profiles: &[LabelProfile],
    gamma: f64,
) -> Result<f64> {
    let terms = composite_terms(dataset, selected, profiles, gamma)?;
    dataset
        .samples()
        .iter()
        .zip(&terms)
        .map(|(s, (target, w))| Ok(w * cross_entropy(&model.probabilities(&s.features), target)?))
        .sum()
}

/// Analytic gradient of [`composite_loss`] with respect to the weights.
pub fn composite_gradient(
    model: &Model,
    dataset: &LabeledDataset,
    selected: &[bool],
    profiles: &[LabelProfile],
    gamma: f64,
) -> Result<Vec<f64>> {
    let terms = composite_terms(dataset, selected, profiles, gamma)?;
    let mut grad = vec![0.0; model.weights().len()];
    for (s, (target, w)) in dataset.samples().iter().zip(&terms) {
        model.accumulate_gradient(&s.features, target, *w, &mut grad);
    }
    Ok(grad)
}

/// Trains a fresh model on the composite objective.
///
/// Mini-batches are drawn from the training split; each selected example
/// carries weight `n_train / |SS_train|` and each rejected one
/// `gamma * n_train / (n_train - |SS_train|)`, so the expected batch loss is
/// the composite loss over the training split. Mixup touches selected
/// examples only. Validation accuracy is measured on held-out selected
/// samples (all held-out samples if none were selected). `gamma = 0` trains
/// on the selected subset alone.
pub fn retrain(
    dataset: &LabeledDataset,
    outcome: &SelectionOutcome,
    gamma: f64,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
) -> Result<Model> {
    outcome.check_matches(dataset)?;
    train_cfg.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma {gamma} must be >= 0")));
    }
    let selected_ids: Vec<usize> = (0..dataset.len()).filter(|&s| outcome.selected[s]).collect();
    if gamma == 0.0 {
        if selected_ids.is_empty() {
            return Err(Error::invalid("gamma = 0 with no selected samples leaves nothing to train on"));
        }
        return train(&dataset.subset(&selected_ids), spec, train_cfg);
    }
    crate::classifier::check_compatible(dataset, spec)?;

    let profiles = profiles(outcome, dataset.num_classes())?;
    let (train_idx, val_idx) = validation_split(dataset.len(), train_cfg.val_fraction, train_cfg.seed)?;
    let n_train = train_idx.len();
    let n_sel = train_idx.iter().filter(|&&i| outcome.selected[i]).count();
    let n_rest = n_train - n_sel;
    if n_sel == 0 {
        warn!("no selected samples in the training split; training on re-weighted samples only");
    }
    let sel_weight = n_train as f64 / n_sel as f64;
    let rest_weight = gamma * n_train as f64 / n_rest as f64;
    let augment = train_cfg.mixup_alpha > 0.0;
    let q = dataset.num_classes();

    let examples: Vec<Example> = train_idx
        .iter()
        .map(|&i| {
            let s = &dataset.samples()[i];
            if outcome.selected[i] {
                let mut target = vec![0.0; q];
                target[s.observed_label] = 1.0;
                Example {
                    index: i,
                    target,
                    weight: sel_weight,
                    augment,
                }
            } else {
                Example {
                    index: i,
                    target: profiles[i].blended_target(s.observed_label),
                    weight: rest_weight,
                    augment: false,
                }
            }
        })
        .collect();
    let val_selected: Vec<usize> = val_idx.iter().copied().filter(|&i| outcome.selected[i]).collect();
    let validation = if val_selected.is_empty() { val_idx } else { val_selected };
    fit(dataset, &examples, &validation, spec, train_cfg).map(|r| r.model)
}

/// Profile CSV: `id,selected,count,pseudo_label,entropy,beta`.
pub fn write_profiles_csv(path: impl AsRef<Path>, outcome: &SelectionOutcome, profiles: &[LabelProfile]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "id,selected,count,pseudo_label,entropy,beta")?;
        for (s, p) in profiles.iter().enumerate() {
            writeln!(
                out,
                "{s},{},{},{},{:?},{:?}",
                u8::from(outcome.selected[s]),
                outcome.counts[s],
                p.pseudo_label,
                p.entropy,
                p.beta
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
