//! Square row-stochastic matrices (noise transitions, confusion matrices).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums must be within this distance of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A `Q x Q` matrix whose rows are probability distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticMatrix {
    rows: Vec<Vec<f64>>,
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let q = rows.len();
        if q == 0 {
            return Err(Error::invalid("matrix must have at least one row"));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("row {j} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("row {j} sums to {sum}, not 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(q: usize) -> Self {
        let rows = (0..q)
            .map(|j| (0..q).map(|k| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows }
    }

    /// Diagonal `q`, off-diagonal `(1 - q) / (Q - 1)`.
    pub fn symmetric(num_classes: usize, diagonal: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("symmetric matrix needs at least 2 classes"));
        }
        if !(0.0..=1.0).contains(&diagonal) {
            return Err(Error::invalid(format!("diagonal {diagonal} outside [0, 1]")));
        }
        let off = (1.0 - diagonal) / (num_classes - 1) as f64;
        let rows = (0..num_classes)
            .map(|j| {
                (0..num_classes)
                    .map(|k| if j == k { diagonal } else { off })
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.rows[j][k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Draws a column index from row `j`.
    pub fn sample_row<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> usize {
        sample_categorical(&self.rows[j], rng)
    }
}

impl TryFrom<Vec<Vec<f64>>> for StochasticMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<StochasticMatrix> for Vec<Vec<f64>> {
    fn from(m: StochasticMatrix) -> Self {
        m.rows
    }
}

/// Inverse-CDF draw from a probability vector. Zero-mass entries are never
/// returned; rounding slack at the top end falls on the last positive entry.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn rejects_bad_rows() {
        assert!(StochasticMatrix::new(vec![vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.5, -0.5], vec![0.0, 1.0]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let mut r = rng::stream(1, &[]);
        for _ in 0..1000 {
            let k = sample_categorical(&[0.0, 0.5, 0.0, 0.5, 0.0], &mut r);
            assert!(k == 1 || k == 3);
        }
    }

    #[test]
    fn serde_validates() {
        let m: StochasticMatrix = serde_json::from_str("[[1.0,0.0],[0.25,0.75]]").unwrap();
        assert_eq!(m.get(1, 1), 0.75);
        assert!(serde_json::from_str::<StochasticMatrix>("[[1.0,0.1],[0.25,0.75]]").is_err());
    }
}
