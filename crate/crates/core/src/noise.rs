//! Noise transition matrices and label corruption.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{LabeledDataset, LabeledSample};
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Symmetric,
    /// Each listed class `j` flips to `k` with probability epsilon.
    Asymmetric { pairs: Vec<(usize, usize)> },
    Explicit,
}

/// A label-noise process: `transition[j][k] = P(observed = k | true = j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseModelRepr", into = "NoiseModelRepr")]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub epsilon: f64,
    pub transition: StochasticMatrix,
}

impl NoiseModel {
    pub fn num_classes(&self) -> usize {
        self.transition.num_classes()
    }

    pub fn explicit(transition: StochasticMatrix) -> Self {
        let q = transition.num_classes();
        let kept: f64 = (0..q).map(|j| transition.get(j, j)).sum::<f64>() / q as f64;
        Self {
            kind: NoiseKind::Explicit,
            epsilon: 1.0 - kept,
            transition,
        }
    }

    /// Parses `symmetric:EPS`, `asym:EPS:j>k,j>k,...` or `none`.
    pub fn parse(spec: &str, num_classes: usize) -> Result<Self> {
        let parts: Vec<&str> = spec.trim().split(':').collect();
        let eps = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid(format!("noise: `{s}` is not a number")))
        };
        match parts.as_slice() {
            ["none"] => symmetric_transition(num_classes, 0.0),
            ["symmetric" | "sym", e] => symmetric_transition(num_classes, eps(e)?),
            ["asym" | "asymmetric", e] => asymmetric_transition(num_classes, eps(e)?, &[]),
            ["asym" | "asymmetric", e, pairs] => {
                let pairs = parse_pairs(pairs)?;
                asymmetric_transition(num_classes, eps(e)?, &pairs)
            }
            _ => Err(Error::invalid(format!(
                "noise spec `{spec}`: expected symmetric:EPS or asym:EPS:j>k,..."
            ))),
        }
    }

    /// The inverse of [`NoiseModel::parse`] for parseable kinds.
    pub fn spec_string(&self) -> Option<String> {
        match &self.kind {
            NoiseKind::Symmetric => Some(format!("symmetric:{}", self.epsilon)),
            NoiseKind::Asymmetric { pairs } if pairs.is_empty() => {
                Some(format!("asym:{}", self.epsilon))
            }
            NoiseKind::Asymmetric { pairs } => {
                let pairs: Vec<String> = pairs.iter().map(|(j, k)| format!("{j}>{k}")).collect();
                Some(format!("asym:{}:{}", self.epsilon, pairs.join(",")))
            }
            NoiseKind::Explicit => None,
        }
    }
}

/// Parses `j>k,j>k,...`.
pub fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (j, k) = p
                .split_once('>')
                .ok_or_else(|| Error::invalid(format!("flip pair `{p}` must look like j>k")))?;
            let idx = |v: &str| -> Result<usize> {
                v.trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("flip pair `{p}`: `{v}` is not a class")))
            };
            Ok((idx(j)?, idx(k)?))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct NoiseModelRepr {
    kind: String,
    epsilon: f64,
    pairs: Vec<[usize; 2]>,
    #[serde(rename = "T")]
    transition: StochasticMatrix,
}

impl From<NoiseModel> for NoiseModelRepr {
    fn from(m: NoiseModel) -> Self {
        let (kind, pairs) = match m.kind {
            NoiseKind::Symmetric => ("symmetric", vec![]),
            NoiseKind::Asymmetric { pairs } => {
                ("asymmetric", pairs.into_iter().map(|(j, k)| [j, k]).collect())
            }
            NoiseKind::Explicit => ("explicit", vec![]),
        };
        Self {
            kind: kind.into(),
            epsilon: m.epsilon,
            pairs,
            transition: m.transition,
        }
    }
}

impl TryFrom<NoiseModelRepr> for NoiseModel {
    type Error = Error;

    fn try_from(r: NoiseModelRepr) -> Result<Self> {
        let kind = match r.kind.as_str() {
            "symmetric" => NoiseKind::Symmetric,
            "asymmetric" => NoiseKind::Asymmetric {
                pairs: r.pairs.into_iter().map(|[j, k]| (j, k)).collect(),
            },
            "explicit" => NoiseKind::Explicit,
            other => return Err(Error::invalid(format!("unknown noise kind `{other}`"))),
        };
        Ok(Self {
            kind,
            epsilon: r.epsilon,
            transition: r.transition,
        })
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..=1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise ratio {epsilon} outside [0, 1]")))
    }
}

/// Uniform flips: keep with `1 - eps`, move to each other class with `eps / (Q - 1)`.
pub fn symmetric_transition(num_classes: usize, epsilon: f64) -> Result<NoiseModel> {
    check_epsilon(epsilon)?;
    Ok(NoiseModel {
        kind: NoiseKind::Symmetric,
        epsilon,
        transition: StochasticMatrix::symmetric(num_classes, 1.0 - epsilon)?,
    })
}

/// Pair flips `j -> k` with probability `eps`. Classes that are not a source
/// keep their labels.
pub fn asymmetric_transition(
    num_classes: usize,
    epsilon: f64,
    pairs: &[(usize, usize)],
) -> Result<NoiseModel> {
    check_epsilon(epsilon)?;
    if num_classes < 2 {
        return Err(Error::invalid("asymmetric noise needs at least 2 classes"));
    }
    let mut rows: Vec<Vec<f64>> = StochasticMatrix::identity(num_classes).into();
    let mut seen = vec![false; num_classes];
    for &(j, k) in pairs {
        if j >= num_classes || k >= num_classes {
            return Err(Error::invalid(format!("flip {j}>{k} outside 0..{num_classes}")));
        }
        if j == k {
            return Err(Error::invalid(format!("flip {j}>{k} maps a class to itself")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::invalid(format!("class {j} appears twice as a flip source")));
        }
        rows[j][j] = 1.0 - epsilon;
        rows[j][k] = epsilon;
    }
    Ok(NoiseModel {
        kind: NoiseKind::Asymmetric {
            pairs: pairs.to_vec(),
        },
        epsilon,
        transition: StochasticMatrix::new(rows)?,
    })
}

/// Redraws every observed label from `T[true_label]`. Samples without ground
/// truth treat their observed label as truth. Each sample has its own stream
/// keyed by id.
pub fn inject(dataset: &LabeledDataset, model: &NoiseModel, seed: u64) -> Result<LabeledDataset> {
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            actual: dataset.num_classes(),
        });
    }
    let samples: Vec<LabeledSample> = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let truth = s.true_label.unwrap_or(s.observed_label);
            let mut r = rng::stream(seed, &[tag::NOISE, s.id as u64]);
            LabeledSample {
                observed_label: model.transition.sample_row(truth, &mut r),
                true_label: Some(truth),
                ..s.clone()
            }
        })
        .collect();
    LabeledDataset::new(samples, dataset.num_classes(), dataset.dim())
}
