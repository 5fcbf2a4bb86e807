//! Noise-robust K-fold cross-validation selection.
//!
//! One NKCVS pass splits the data into `K` folds, trains a fresh classifier
//! on each fold's complement and predicts the held-out fold, so every sample
//! is predicted exactly once by a model that never saw it. A sample is a
//! member of the pass's set when the prediction reproduces its observed
//! label. E-NKCVS repeats the pass `M` times with fresh splits and keeps
//! samples that were members at least `t` times.
//!
//! Classifier training sits behind [`FoldTrainer`], so selection can run on
//! the SGD trainer or on the stubs used by tests and the theory checks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, Model, ModelSpec, TrainConfig};
use crate::datamodel::{kfold_split, LabeledDataset, LabeledSample};
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::rng::{self, tag};

/// Fits a classifier on the training complement of one fold.
pub trait FoldTrainer: Sync {
    fn fit(&self, train: &LabeledDataset, seed: u64) -> Result<Box<dyn FoldPredictor>>;
}

pub trait FoldPredictor: Send + Sync {
    fn predict(&self, sample: &LabeledSample) -> usize;

    /// Feature width the predictor expects, if it has one.
    fn input_dim(&self) -> Option<usize> {
        None
    }
}

impl FoldPredictor for Model {
    fn predict(&self, sample: &LabeledSample) -> usize {
        self.predict_label(&sample.features)
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.spec().input_dim)
    }
}

/// The real trainer: mixup SGD via [`crate::classifier::train`].
#[derive(Debug, Clone)]
pub struct SgdTrainer {
    pub spec: ModelSpec,
    pub train_cfg: TrainConfig,
}

impl FoldTrainer for SgdTrainer {
    fn fit(&self, data: &LabeledDataset, seed: u64) -> Result<Box<dyn FoldPredictor>> {
        let model = train(data, &self.spec, &self.train_cfg.reseeded(seed))?;
        Ok(Box::new(model))
    }
}

/// Predicts the ground-truth label (the observed one when truth is unknown).
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleStub;

impl FoldTrainer for OracleStub {
    fn fit(&self, _: &LabeledDataset, _: u64) -> Result<Box<dyn FoldPredictor>> {
        Ok(Box::new(OracleStub))
    }
}

impl FoldPredictor for OracleStub {
    fn predict(&self, sample: &LabeledSample) -> usize {
        sample.true_label.unwrap_or(sample.observed_label)
    }
}

/// Always predicts one class.
#[derive(Debug, Clone, Copy)]
pub struct ConstantStub(pub usize);

impl FoldTrainer for ConstantStub {
    fn fit(&self, _: &LabeledDataset, _: u64) -> Result<Box<dyn FoldPredictor>> {
        Ok(Box::new(*self))
    }
}

impl FoldPredictor for ConstantStub {
    fn predict(&self, _: &LabeledSample) -> usize {
        self.0
    }
}

/// Draws each prediction from `confusion[true_label]`, independently per
/// fold model and sample.
#[derive(Debug, Clone)]
pub struct ConfusionSampler {
    pub confusion: StochasticMatrix,
}

struct SeededConfusion {
    confusion: StochasticMatrix,
    seed: u64,
}

impl FoldTrainer for ConfusionSampler {
    fn fit(&self, _: &LabeledDataset, seed: u64) -> Result<Box<dyn FoldPredictor>> {
        Ok(Box::new(SeededConfusion {
            confusion: self.confusion.clone(),
            seed,
        }))
    }
}

impl FoldPredictor for SeededConfusion {
    fn predict(&self, sample: &LabeledSample) -> usize {
        let truth = sample.true_label.unwrap_or(sample.observed_label);
        let mut r = rng::stream(self.seed, &[tag::STUB, sample.id as u64]);
        self.confusion.sample_row(truth, &mut r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub spec: ModelSpec,
    pub train_cfg: TrainConfig,
    pub seed: u64,
}

impl SelectionConfig {
    pub const DEFAULT_K: usize = 10;
    pub const DEFAULT_M: usize = 5;
    pub const DEFAULT_T: usize = 2;

    /// Default `K = 10, M = 5, t = 2` with the given model.
    pub fn new(spec: ModelSpec, train_cfg: TrainConfig, seed: u64) -> Self {
        Self {
            k: Self::DEFAULT_K,
            m: Self::DEFAULT_M,
            t: Self::DEFAULT_T,
            spec,
            train_cfg,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("K = {} must be at least 2", self.k)));
        }
        if self.m == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        if self.t == 0 || self.t > self.m {
            return Err(Error::invalid(format!("t = {} must satisfy 0 < t <= M = {}", self.t, self.m)));
        }
        self.spec.validate()?;
        self.train_cfg.validate()
    }
}

/// Outcome of one NKCVS pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `predicted_label[s] == observed_label[s]`.
    pub member_of_t: Vec<bool>,
    pub predicted_label: Vec<usize>,
}

impl IterationRecord {
    fn from_predictions(iteration: usize, predicted_label: Vec<usize>, observed: &[usize]) -> Self {
        let member_of_t = predicted_label.iter().zip(observed).map(|(p, y)| p == y).collect();
        Self {
            iteration,
            member_of_t,
            predicted_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OutcomeRepr", into = "OutcomeRepr")]
pub struct SelectionOutcome {
    pub records: Vec<IterationRecord>,
    pub selected: Vec<bool>,
    pub counts: Vec<usize>,
    pub threshold: usize,
    observed: Vec<usize>,
}

impl SelectionOutcome {
    pub fn from_records(records: Vec<IterationRecord>, observed: Vec<usize>, threshold: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("selection needs at least one iteration"));
        }
        if threshold == 0 || threshold > records.len() {
            return Err(Error::invalid(format!(
                "t = {threshold} must satisfy 0 < t <= M = {}",
                records.len()
            )));
        }
        let n = observed.len();
        for r in &records {
            if r.predicted_label.len() != n || r.member_of_t.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: r.predicted_label.len(),
                });
            }
        }
        let counts: Vec<usize> = (0..n)
            .map(|s| records.iter().filter(|r| r.member_of_t[s]).count())
            .collect();
        let selected = counts.iter().map(|&c| c >= threshold).collect();
        Ok(Self {
            records,
            selected,
            counts,
            threshold,
            observed,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed
    }

    pub fn num_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// The `M` predictions made for sample `s`, in iteration order.
    pub fn predictions_of(&self, s: usize) -> Vec<usize> {
        self.records.iter().map(|r| r.predicted_label[s]).collect()
    }

    /// Selection flags for a different threshold over the same records.
    pub fn selected_at(&self, threshold: usize) -> Vec<bool> {
        self.counts.iter().map(|&c| c >= threshold).collect()
    }

    /// Same records, different threshold.
    pub fn with_threshold(&self, threshold: usize) -> Result<Self> {
        Self::from_records(self.records.clone(), self.observed.clone(), threshold)
    }

    /// Checks that the outcome belongs to `dataset`.
    pub fn check_matches(&self, dataset: &LabeledDataset) -> Result<()> {
        if self.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                expected: dataset.len(),
                actual: self.len(),
            });
        }
        if self.observed != dataset.observed_labels() {
            return Err(Error::invalid("selection outcome was computed for different labels"));
        }
        Ok(())
    }

    /// Verdict CSV: `id,observed_label,count,selected,predictions` with the
    /// predictions joined by `|`.
    pub fn write_verdicts_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "id,observed_label,count,selected,predictions")?;
            for s in 0..self.len() {
                let preds: Vec<String> = self.predictions_of(s).iter().map(|p| p.to_string()).collect();
                writeln!(
                    out,
                    "{s},{},{},{},{}",
                    self.observed[s],
                    self.counts[s],
                    u8::from(self.selected[s]),
                    preds.join("|")
                )?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct OutcomeRepr {
    iterations: usize,
    threshold: usize,
    observed_labels: Vec<usize>,
    counts: Vec<usize>,
    selected: Vec<bool>,
    /// Per sample, the `M` predictions in iteration order.
    predictions: Vec<Vec<usize>>,
}

impl From<SelectionOutcome> for OutcomeRepr {
    fn from(o: SelectionOutcome) -> Self {
        let predictions = (0..o.len()).map(|s| o.predictions_of(s)).collect();
        Self {
            iterations: o.iterations(),
            threshold: o.threshold,
            observed_labels: o.observed,
            counts: o.counts,
            selected: o.selected,
            predictions,
        }
    }
}

impl TryFrom<OutcomeRepr> for SelectionOutcome {
    type Error = Error;

    fn try_from(r: OutcomeRepr) -> Result<Self> {
        if r.predictions.len() != r.observed_labels.len()
            || r.predictions.iter().any(|p| p.len() != r.iterations)
        {
            return Err(Error::invalid("selection JSON: prediction table has the wrong shape"));
        }
        let records = (0..r.iterations)
            .map(|i| {
                let preds = r.predictions.iter().map(|p| p[i]).collect();
                IterationRecord::from_predictions(i, preds, &r.observed_labels)
            })
            .collect();
        let outcome = Self::from_records(records, r.observed_labels, r.threshold)?;
        if outcome.counts != r.counts || outcome.selected != r.selected {
            return Err(Error::invalid("selection JSON: counts or flags disagree with predictions"));
        }
        Ok(outcome)
    }
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    rng::derive(seed, &[tag::ITERATION, iteration as u64])
}

/// Predictions of one fold model for its held-out samples.
fn run_fold(
    dataset: &LabeledDataset,
    folds: &crate::datamodel::FoldAssignment,
    fold: usize,
    trainer: &dyn FoldTrainer,
    iter_seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let train_part = dataset.subset(&folds.complement(fold));
    let predictor = trainer.fit(&train_part, rng::derive(iter_seed, &[tag::FOLD, fold as u64]))?;
    Ok(folds
        .members(fold)
        .into_iter()
        .map(|id| (id, predictor.predict(&dataset.samples()[id])))
        .collect())
}

/// Runs the passes `iterations` in parallel over (iteration, fold) pairs.
fn run_passes(
    dataset: &LabeledDataset,
    k: usize,
    iterations: &[usize],
    trainer: &dyn FoldTrainer,
    seed: u64,
) -> Result<Vec<IterationRecord>> {
    let n = dataset.len();
    if k > n {
        return Err(Error::invalid(format!("K = {k} exceeds the {n} samples")));
    }
    let splits = iterations
        .iter()
        .map(|&i| {
            let s = iteration_seed(seed, i);
            kfold_split(dataset, k, s).map(|f| (i, s, f))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..splits.len()).flat_map(|a| (0..k).map(move |j| (a, j))).collect();
    let results = jobs
        .par_iter()
        .map(|&(a, j)| {
            let (_, iter_seed, folds) = &splits[a];
            run_fold(dataset, folds, j, trainer, *iter_seed)
        })
        .collect::<Vec<_>>();

    let observed = dataset.observed_labels();
    let mut predicted = vec![vec![usize::MAX; n]; splits.len()];
    for (&(a, _), result) in jobs.iter().zip(results) {
        for (id, label) in result? {
            predicted[a][id] = label;
        }
    }
    Ok(splits
        .iter()
        .zip(predicted)
        .map(|((i, _, _), preds)| {
            debug_assert!(preds.iter().all(|&p| p != usize::MAX));
            IterationRecord::from_predictions(*i, preds, &observed)
        })
        .collect())
}

/// One NKCVS pass with the SGD trainer.
pub fn nkcvs(
    dataset: &LabeledDataset,
    k: usize,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<IterationRecord> {
    let trainer = SgdTrainer {
        spec: spec.clone(),
        train_cfg: train_cfg.clone(),
    };
    nkcvs_with(dataset, k, &trainer, seed)
}

/// One NKCVS pass with any trainer; uses the iteration-0 stream of `seed`.
pub fn nkcvs_with(dataset: &LabeledDataset, k: usize, trainer: &dyn FoldTrainer, seed: u64) -> Result<IterationRecord> {
    let mut records = run_passes(dataset, k, &[0], trainer, seed)?;
    Ok(records.remove(0))
}

/// E-NKCVS with the SGD trainer described by `cfg`.
pub fn enkcvs(dataset: &LabeledDataset, cfg: &SelectionConfig) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let trainer = SgdTrainer {
        spec: cfg.spec.clone(),
        train_cfg: cfg.train_cfg.clone(),
    };
    enkcvs_with(dataset, cfg.k, cfg.m, cfg.t, &trainer, cfg.seed)
}

/// E-NKCVS with any trainer.
pub fn enkcvs_with(
    dataset: &LabeledDataset,
    k: usize,
    m: usize,
    t: usize,
    trainer: &dyn FoldTrainer,
    seed: u64,
) -> Result<SelectionOutcome> {
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    if k < 2 {
        return Err(Error::invalid(format!("K = {k} must be at least 2")));
    }
    let iterations: Vec<usize> = (0..m).collect();
    let records = run_passes(dataset, k, &iterations, trainer, seed)?;
    SelectionOutcome::from_records(records, dataset.observed_labels(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::generate_blobs;
    use crate::noise::{inject, symmetric_transition};

    fn noisy(n: usize, eps: f64, seed: u64) -> LabeledDataset {
        let ds = generate_blobs(4, n, 3, 2.0, seed).unwrap();
        inject(&ds, &symmetric_transition(4, eps).unwrap(), seed + 1).unwrap()
    }

    #[test]
    fn oracle_recovers_clean_set() {
        let ds = noisy(200, 0.4, 1);
        let rec = nkcvs_with(&ds, 5, &OracleStub, 3).unwrap();
        for (s, sample) in ds.samples().iter().enumerate() {
            assert_eq!(rec.member_of_t[s], sample.is_clean().unwrap());
        }
    }

    #[test]
    fn constant_stub_selects_its_class() {
        let ds = noisy(120, 0.5, 2);
        let rec = nkcvs_with(&ds, 4, &ConstantStub(0), 3).unwrap();
        for (s, sample) in ds.samples().iter().enumerate() {
            assert_eq!(rec.member_of_t[s], sample.observed_label == 0);
            assert_eq!(rec.predicted_label[s], 0);
        }
    }

    /// Counts how many times each sample was handed to a predictor.
    #[derive(Clone, Default)]
    struct Counting(std::sync::Arc<std::sync::Mutex<Vec<usize>>>);

    impl FoldTrainer for Counting {
        fn fit(&self, _: &LabeledDataset, _: u64) -> Result<Box<dyn FoldPredictor>> {
            Ok(Box::new(self.clone()))
        }
    }

    impl FoldPredictor for Counting {
        fn predict(&self, sample: &LabeledSample) -> usize {
            self.0.lock().unwrap()[sample.id] += 1;
            0
        }
    }

    #[test]
    fn every_sample_predicted_once() {
        let ds = noisy(97, 0.2, 3);
        let counter = Counting::default();
        *counter.0.lock().unwrap() = vec![0; 97];
        nkcvs_with(&ds, 7, &counter, 0).unwrap();
        assert!(counter.0.lock().unwrap().iter().all(|&c| c == 1));
    }

    #[test]
    fn threshold_arithmetic() {
        let observed = vec![0];
        let pattern = [true, false, true, false, false];
        let records = pattern
            .iter()
            .enumerate()
            .map(|(i, &hit)| IterationRecord::from_predictions(i, vec![if hit { 0 } else { 1 }], &observed))
            .collect::<Vec<_>>();
        let o = SelectionOutcome::from_records(records.clone(), observed.clone(), 2).unwrap();
        assert!(o.selected[0]);
        assert_eq!(o.counts[0], 2);
        let o = SelectionOutcome::from_records(records, observed, 3).unwrap();
        assert!(!o.selected[0]);
    }

    #[test]
    fn single_iteration_reduces_to_pass() {
        let ds = noisy(100, 0.3, 4);
        let sampler = ConfusionSampler {
            confusion: StochasticMatrix::symmetric(4, 0.7).unwrap(),
        };
        let out = enkcvs_with(&ds, 5, 1, 1, &sampler, 9).unwrap();
        let pass = nkcvs_with(&ds, 5, &sampler, 9).unwrap();
        assert_eq!(out.selected, pass.member_of_t);
    }

    #[test]
    fn extreme_thresholds_are_intersection_and_union() {
        let ds = noisy(150, 0.3, 5);
        let sampler = ConfusionSampler {
            confusion: StochasticMatrix::symmetric(4, 0.6).unwrap(),
        };
        let out = enkcvs_with(&ds, 3, 4, 1, &sampler, 2).unwrap();
        for s in 0..ds.len() {
            let any = out.records.iter().any(|r| r.member_of_t[s]);
            let all = out.records.iter().all(|r| r.member_of_t[s]);
            assert_eq!(out.selected[s], any);
            assert_eq!(out.selected_at(4)[s], all);
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let ds = noisy(200, 0.3, 6);
        let cfg = SelectionConfig {
            k: 4,
            m: 2,
            t: 1,
            spec: ModelSpec::linear(3, 4),
            train_cfg: TrainConfig {
                epochs: 3,
                ..Default::default()
            },
            seed: 17,
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| enkcvs(&ds, &cfg)).unwrap();
        let b = four.install(|| enkcvs(&ds, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let base = SelectionConfig::new(ModelSpec::linear(2, 2), TrainConfig::default(), 0);
        assert_eq!((base.k, base.m, base.t), (10, 5, 2));
        assert!(base.validate().is_ok());
        assert!(SelectionConfig { t: 0, ..base.clone() }.validate().is_err());
        assert!(SelectionConfig { t: 6, ..base.clone() }.validate().is_err());
        assert!(SelectionConfig { k: 1, ..base.clone() }.validate().is_err());
        let ds = noisy(8, 0.0, 0);
        assert!(nkcvs_with(&ds, 9, &OracleStub, 0).is_err());
    }

    #[test]
    fn json_round_trip_and_tamper_check() {
        let ds = noisy(60, 0.4, 7);
        let sampler = ConfusionSampler {
            confusion: StochasticMatrix::symmetric(4, 0.8).unwrap(),
        };
        let out = enkcvs_with(&ds, 3, 3, 2, &sampler, 1).unwrap();
        let text = serde_json::to_string(&out).unwrap();
        let back: SelectionOutcome = serde_json::from_str(&text).unwrap();
        assert_eq!(back, out);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["counts"][0] = serde_json::json!(99);
        assert!(serde_json::from_value::<SelectionOutcome>(v).is_err());
    }
}
