//! Selection metrics, test accuracy and the parameter sweep harness.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ModelSpec, TrainConfig};
use crate::datamodel::{generate_blobs, LabeledDataset};
use crate::error::{Error, Result};
use crate::noise::{asymmetric_transition, inject, symmetric_transition, NoiseModel};
use crate::reweight::retrain;
use crate::rng::{self, tag};
use crate::selection::{enkcvs, FoldPredictor, SelectionConfig, SelectionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub n_cs: usize,
    pub n_ss: usize,
    pub n_css: usize,
    pub precision: f64,
    pub recall: f64,
}

impl SelectionMetrics {
    /// `precision = |CSS| / |SS|`, `recall = |CSS| / |CS|`.
    pub fn from_counts(n_cs: usize, n_ss: usize, n_css: usize) -> Result<Self> {
        if n_css > n_cs.min(n_ss) {
            return Err(Error::invalid(format!(
                "|CSS| = {n_css} cannot exceed |CS| = {n_cs} or |SS| = {n_ss}"
            )));
        }
        if n_ss == 0 {
            return Err(Error::Undefined("precision"));
        }
        if n_cs == 0 {
            return Err(Error::Undefined("recall"));
        }
        Ok(Self {
            n_cs,
            n_ss,
            n_css,
            precision: n_css as f64 / n_ss as f64,
            recall: n_css as f64 / n_cs as f64,
        })
    }
}

/// Counts clean, selected and clean-selected samples against ground truth.
pub fn selection_metrics(outcome: &SelectionOutcome, dataset: &LabeledDataset) -> Result<SelectionMetrics> {
    outcome.check_matches(dataset)?;
    let truth = dataset.true_labels()?;
    let mut n_cs = 0;
    let mut n_ss = 0;
    let mut n_css = 0;
    for ((s, t), &sel) in dataset.samples().iter().zip(truth).zip(&outcome.selected) {
        let clean = s.observed_label == t;
        n_cs += usize::from(clean);
        n_ss += usize::from(sel);
        n_css += usize::from(clean && sel);
    }
    SelectionMetrics::from_counts(n_cs, n_ss, n_css)
}

/// Fraction of samples whose prediction equals their label. Ground truth is
/// used when present, the observed label otherwise.
pub fn test_accuracy<P: FoldPredictor + ?Sized>(model: &P, testset: &LabeledDataset) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    if let Some(expected) = model.input_dim() {
        if expected != testset.dim() {
            return Err(Error::DimensionMismatch {
                expected,
                actual: testset.dim(),
            });
        }
    }
    let hits = testset
        .samples()
        .iter()
        .filter(|s| model.predict(s) == s.true_label.unwrap_or(s.observed_label))
        .count();
    Ok(hits as f64 / testset.len() as f64)
}

/// Where each sweep run gets its clean data.
#[derive(Debug, Clone, PartialEq)]
pub enum DataRecipe {
    /// Fresh blobs per run seed; the test split uses its own seed.
    Blobs {
        num_classes: usize,
        n: usize,
        dim: usize,
        separation: f64,
        n_test: usize,
    },
    /// The same data for every run.
    Fixed {
        train: LabeledDataset,
        test: Option<LabeledDataset>,
    },
}

impl DataRecipe {
    fn materialize(&self, seed: u64) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
        match self {
            DataRecipe::Blobs {
                num_classes,
                n,
                dim,
                separation,
                n_test,
            } => {
                let train = generate_blobs(*num_classes, *n, *dim, *separation, rng::derive(seed, &[tag::SWEEP, 0]))?;
                let test = if *n_test > 0 {
                    Some(generate_blobs(
                        *num_classes,
                        *n_test,
                        *dim,
                        *separation,
                        rng::derive(seed, &[tag::SWEEP, 3]),
                    )?)
                } else {
                    None
                };
                Ok((train, test))
            }
            DataRecipe::Fixed { train, test } => Ok((train.clone(), test.clone())),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DataRecipe::Blobs { num_classes, .. } => *num_classes,
            DataRecipe::Fixed { train, .. } => train.num_classes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub ts: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// Flip pairs for asymmetric noise; `None` means symmetric noise.
    pub pairs: Option<Vec<(usize, usize)>>,
    pub spec: ModelSpec,
    pub train_cfg: TrainConfig,
    /// Retrain on the composite loss and measure test accuracy.
    pub retrain: bool,
    pub gamma: f64,
}

impl SweepGrid {
    /// `K in {2,4,6,8,10}`, `M in {1..5}`, `t = 1`, `eps = 0.4`.
    pub fn default_for(spec: ModelSpec) -> Self {
        Self {
            ks: vec![2, 4, 6, 8, 10],
            ms: vec![1, 2, 3, 4, 5],
            ts: vec![1],
            epsilons: vec![0.4],
            pairs: None,
            spec,
            train_cfg: TrainConfig::default(),
            retrain: false,
            gamma: 0.2,
        }
    }

    /// Cells in output order; combinations with `t > M` are skipped.
    pub fn cells(&self, seeds: &[u64]) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &epsilon in &self.epsilons {
            for &k in &self.ks {
                for &m in &self.ms {
                    for &t in self.ts.iter().filter(|&&t| t <= m) {
                        for &seed in seeds {
                            cells.push(SweepCell { k, m, t, epsilon, seed });
                        }
                    }
                }
            }
        }
        cells
    }

    fn noise_kind(&self) -> &'static str {
        if self.pairs.is_some() {
            "asymmetric"
        } else {
            "symmetric"
        }
    }

    fn noise_model(&self, num_classes: usize, epsilon: f64) -> Result<NoiseModel> {
        match &self.pairs {
            Some(pairs) => asymmetric_transition(num_classes, epsilon, pairs),
            None => symmetric_transition(num_classes, epsilon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub cell: SweepCell,
    pub noise_kind: String,
    pub metrics: Option<SelectionMetrics>,
    pub retrain_accuracy: Option<f64>,
    /// Why this cell has no metrics, if it failed.
    pub error: Option<String>,
    pub wall_time: f64,
}

fn run_cell(grid: &SweepGrid, recipe: &DataRecipe, cell: SweepCell) -> Result<(SelectionMetrics, Option<f64>)> {
    let (clean, test) = recipe.materialize(cell.seed)?;
    let noise = grid.noise_model(clean.num_classes(), cell.epsilon)?;
    let noisy = inject(&clean, &noise, rng::derive(cell.seed, &[tag::SWEEP, 1, cell.epsilon.to_bits()]))?;
    let cfg = SelectionConfig {
        k: cell.k,
        m: cell.m,
        t: cell.t,
        spec: grid.spec.clone(),
        train_cfg: grid.train_cfg.clone(),
        seed: rng::derive(
            cell.seed,
            &[tag::SWEEP, 2, cell.epsilon.to_bits(), cell.k as u64, cell.m as u64, cell.t as u64],
        ),
    };
    let outcome = enkcvs(&noisy, &cfg)?;
    let metrics = selection_metrics(&outcome, &noisy)?;
    let accuracy = match (grid.retrain, test) {
        (true, Some(test)) => {
            let train_cfg = grid.train_cfg.reseeded(rng::derive(cfg.seed, &[tag::RETRAIN]));
            let model = retrain(&noisy, &outcome, grid.gamma, &grid.spec, &train_cfg)?;
            Some(test_accuracy(&model, &test)?)
        }
        (true, None) => return Err(Error::invalid("retraining requested without a test set")),
        (false, _) => None,
    };
    Ok((metrics, accuracy))
}

/// Runs noise injection, selection, metrics and optionally retraining for
/// every grid cell and seed. Cells run in parallel on the current rayon pool;
/// a failing cell is recorded with its error and does not stop the sweep.
pub fn sweep(grid: &SweepGrid, recipe: &DataRecipe, seeds: &[u64]) -> Result<Vec<SweepRecord>> {
    if seeds.is_empty() || grid.ks.is_empty() || grid.ms.is_empty() || grid.ts.is_empty() || grid.epsilons.is_empty() {
        return Err(Error::invalid("sweep grid and seed list must be non-empty"));
    }
    let cells = grid.cells(seeds);
    Ok(cells
        .par_iter()
        .map(|&cell| {
            let start = Instant::now();
            let result = run_cell(grid, recipe, cell);
            let wall_time = start.elapsed().as_secs_f64();
            let (metrics, retrain_accuracy, error) = match result {
                Ok((m, a)) => (Some(m), a, None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            SweepRecord {
                cell,
                noise_kind: grid.noise_kind().into(),
                metrics,
                retrain_accuracy,
                error,
                wall_time,
            }
        })
        .collect())
}

/// One row per record. Timing is left out so the file is reproducible.
pub fn write_sweep_csv(path: impl AsRef<Path>, records: &[SweepRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "k,m,t,epsilon,noise,seed,n_cs,n_ss,n_css,precision,recall,retrain_accuracy,error")?;
        for r in records {
            let c = &r.cell;
            let m = r.metrics;
            writeln!(
                out,
                "{},{},{},{:?},{},{},{},{},{},{},{},{},{}",
                c.k,
                c.m,
                c.t,
                c.epsilon,
                r.noise_kind,
                c.seed,
                opt(m.map(|m| m.n_cs.to_string())),
                opt(m.map(|m| m.n_ss.to_string())),
                opt(m.map(|m| m.n_css.to_string())),
                opt(m.map(|m| format!("{:?}", m.precision))),
                opt(m.map(|m| format!("{:?}", m.recall))),
                opt(r.retrain_accuracy.map(|a| format!("{a:?}"))),
                opt(r.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
