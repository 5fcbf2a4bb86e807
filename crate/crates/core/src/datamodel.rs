//! Dataset representation, CSV ingestion, synthetic blobs and K-fold splits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: usize,
    pub features: Vec<f64>,
    pub observed_label: usize,
    /// Ground truth, when known.
    pub true_label: Option<usize>,
}

impl LabeledSample {
    /// Whether the observed label matches the ground truth. `None` when the
    /// ground truth is unknown.
    pub fn is_clean(&self) -> Option<bool> {
        self.true_label.map(|t| t == self.observed_label)
    }
}

/// An ordered collection of samples sharing a class count and feature
/// dimension. Ids are always `0..n` in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    samples: Vec<LabeledSample>,
    num_classes: usize,
    dim: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize, dim: usize) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::invalid("num_classes and dim must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::invalid(format!("sample at position {i} has id {}", s.id)));
            }
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: s.features.len(),
                });
            }
            if s.observed_label >= num_classes || s.true_label.is_some_and(|t| t >= num_classes) {
                return Err(Error::invalid(format!(
                    "sample {i} has a label outside 0..{num_classes}"
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            dim,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    pub fn has_true_labels(&self) -> bool {
        self.samples.iter().all(|s| s.true_label.is_some())
    }

    /// Ground-truth labels, or an error naming the first sample without one.
    pub fn true_labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| s.true_label.ok_or(Error::MissingTrueLabel { id: s.id }))
            .collect()
    }

    /// A new dataset holding the samples at `indices`, re-numbered `0..`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let samples = indices
            .iter()
            .enumerate()
            .map(|(new_id, &i)| LabeledSample {
                id: new_id,
                ..self.samples[i].clone()
            })
            .collect();
        Self {
            samples,
            num_classes: self.num_classes,
            dim: self.dim,
        }
    }

    /// Replaces every observed label, keeping features, ids and ground truth.
    pub fn with_observed_labels(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: labels.len(),
            });
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &y)| LabeledSample {
                observed_label: y,
                ..s.clone()
            })
            .collect();
        Self::new(samples, self.num_classes, self.dim)
    }

    /// Number of samples whose observed label equals the ground truth.
    pub fn count_clean(&self) -> Result<usize> {
        let truth = self.true_labels()?;
        Ok(self
            .samples
            .iter()
            .zip(truth)
            .filter(|(s, t)| s.observed_label == *t)
            .count())
    }

    /// Writes the dataset as CSV: `f0..f{d-1},label[,true_label]`. Features
    /// use the shortest round-trip representation, so [`load_csv`] restores
    /// them bit-exactly.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let with_truth = self.samples.iter().any(|s| s.true_label.is_some());
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        if with_truth {
            header.push("true_label".into());
        }
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "{}", header.join(","))?;
            for s in &self.samples {
                for x in &s.features {
                    write!(out, "{x:?},")?;
                }
                write!(out, "{}", s.observed_label)?;
                if with_truth {
                    match s.true_label {
                        Some(t) => write!(out, ",{t}")?,
                        None => write!(out, ",")?,
                    }
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Column layout for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_col: String,
    pub true_label_col: Option<String>,
    /// Overrides class-count inference; labels outside the range are errors.
    pub num_classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_col: "label".into(),
            true_label_col: None,
            num_classes: None,
        }
    }
}

/// Reads a header-first CSV file. Every column other than the label columns
/// is a numeric feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, 1, "", e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile { path: path.into() });
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{}: no column named `{name}`", path.display())))
    };
    let label_idx = find(&schema.label_col)?;
    let truth_idx = schema.true_label_col.as_deref().map(find).transpose()?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && Some(i) != truth_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::invalid(format!("{}: no feature columns", path.display())));
    }

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers are 1-based file lines, header included.
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, row, "", e.to_string()))?;
        let features = feature_idx
            .iter()
            .map(|&c| {
                let cell = record[c].trim();
                cell.parse::<f64>()
                    .map_err(|_| csv_error(path, row, &headers[c], format!("`{cell}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let parse_label = |c: usize| -> Result<usize> {
            let cell = record[c].trim();
            cell.parse::<usize>()
                .map_err(|_| csv_error(path, row, &headers[c], format!("`{cell}` is not a class index")))
        };
        let observed_label = parse_label(label_idx)?;
        let true_label = match truth_idx {
            Some(c) if !record[c].trim().is_empty() => Some(parse_label(c)?),
            _ => None,
        };
        samples.push(LabeledSample {
            id: samples.len(),
            features,
            observed_label,
            true_label,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }

    let num_classes = match schema.num_classes {
        Some(q) => {
            for (i, s) in samples.iter().enumerate() {
                for label in std::iter::once(s.observed_label).chain(s.true_label) {
                    if label >= q {
                        return Err(Error::LabelOutOfRange {
                            path: path.into(),
                            row: i + 2,
                            label,
                            num_classes: q,
                        });
                    }
                }
            }
            q
        }
        None => {
            samples
                .iter()
                .flat_map(|s| std::iter::once(s.observed_label).chain(s.true_label))
                .max()
                .unwrap_or(0)
                + 1
        }
    };
    LabeledDataset::new(samples, num_classes, feature_idx.len())
}

fn csv_error(path: &Path, row: usize, column: &str, message: String) -> Error {
    Error::Csv {
        path: path.into(),
        row,
        column: column.into(),
        message,
    }
}

/// Unit-variance Gaussian clusters, one per class, with class `j` centred at
/// `separation * e_{j mod d}`. Labels cycle `0, 1, .., Q-1, 0, ..` so class
/// sizes differ by at most one. Every sample draws from its own stream.
pub fn generate_blobs(
    num_classes: usize,
    n: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::invalid("blobs need at least 2 classes"));
    }
    if n < num_classes {
        return Err(Error::invalid(format!("n = {n} is smaller than Q = {num_classes}")));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation {separation} must be finite and >= 0")));
    }
    let samples = (0..n)
        .map(|id| {
            let label = id % num_classes;
            let mut r = rng::stream(seed, &[tag::BLOBS, id as u64]);
            let features = (0..dim)
                .map(|j| {
                    let noise: f64 = StandardNormal.sample(&mut r);
                    let centre = if j == label % dim { separation } else { 0.0 };
                    centre + noise
                })
                .collect();
            LabeledSample {
                id,
                features,
                observed_label: label,
                true_label: Some(label),
            }
        })
        .collect();
    LabeledDataset::new(samples, num_classes, dim)
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// Sample ids in fold `j`, ascending.
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == j)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sample ids outside fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != j)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniformly random partition into `k` folds whose sizes differ by at most one.
pub fn kfold_split(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.len();
    if k < 2 {
        return Err(Error::invalid(format!("K = {k} must be at least 2")));
    }
    if k > n {
        return Err(Error::invalid(format!("K = {k} exceeds the {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::FOLDS]));
    let mut fold_of = vec![0; n];
    for (pos, &id) in order.iter().enumerate() {
        fold_of[id] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
