use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::datamodel::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;

/// Empirical `C[j][k] = P(predicted = k | true = j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub matrix: StochasticMatrix,
    pub counts: Vec<Vec<usize>>,
    /// True classes with no samples; their rows are uniform.
    pub unsupported_rows: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        let mut counts = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("label outside 0..{num_classes}")));
            }
            counts[t][p] += 1;
        }
        let mut unsupported_rows = Vec::new();
        let rows = counts
            .iter()
            .enumerate()
            .map(|(j, row)| {
                let total: usize = row.iter().sum();
                if total == 0 {
                    unsupported_rows.push(j);
                    vec![1.0 / num_classes as f64; num_classes]
                } else {
                    normalize(row, total)
                }
            })
            .collect();
        Ok(Self {
            matrix: StochasticMatrix::new(rows)?,
            counts,
            unsupported_rows,
        })
    }

    /// Mean of the diagonal over supported rows.
    pub fn mean_diagonal(&self) -> f64 {
        let q = self.counts.len();
        let supported: Vec<usize> = (0..q).filter(|j| !self.unsupported_rows.contains(j)).collect();
        if supported.is_empty() {
            return 0.0;
        }
        supported.iter().map(|&j| self.matrix.get(j, j)).sum::<f64>() / supported.len() as f64
    }
}

/// Divides counts by their total, nudging the largest entry so the row sums
/// to one within rounding of a single addition.
fn normalize(row: &[usize], total: usize) -> Vec<f64> {
    let mut out: Vec<f64> = row.iter().map(|&c| c as f64 / total as f64).collect();
    let sum: f64 = out.iter().sum();
    let largest = super::model::argmax(&out);
    out[largest] += 1.0 - sum;
    out
}

/// Confusion matrix of `model` against the ground truth of `dataset`.
pub fn confusion_matrix(model: &Model, dataset: &LabeledDataset) -> Result<ConfusionMatrix> {
    let truth = dataset.true_labels()?;
    let predicted: Vec<usize> = dataset
        .samples()
        .iter()
        .map(|s| super::predict(model, &s.features).map(|(_, label)| label))
        .collect::<Result<_>>()?;
    ConfusionMatrix::from_predictions(&truth, &predicted, dataset.num_classes())
}
