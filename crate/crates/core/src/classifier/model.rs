use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Probabilities are clamped to this before taking logs.
const LOG_FLOOR: f64 = 1e-12;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    OneHidden { width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    pub init_scale: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Linear,
            input_dim,
            num_classes,
            init_scale: 1.0,
        }
    }

    pub fn one_hidden(input_dim: usize, num_classes: usize, width: usize) -> Self {
        Self {
            architecture: Architecture::OneHidden { width },
            input_dim,
            num_classes,
            init_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("model input_dim and num_classes must be >= 1"));
        }
        if let Architecture::OneHidden { width: 0 } = self.architecture {
            return Err(Error::invalid("hidden width must be >= 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, q) = (self.input_dim, self.num_classes);
        match self.architecture {
            Architecture::Linear => q * d + q,
            Architecture::OneHidden { width: h } => h * d + h + q * h + q,
        }
    }
}

/// Parameters are stored flat. Linear: `W[Q x d]`, `b[Q]`. One hidden layer:
/// `W1[h x d]`, `b1[h]`, `W2[Q x h]`, `b2[Q]`. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct Model {
    spec: ModelSpec,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format_version: u32,
    spec: ModelSpec,
    weights: Vec<f64>,
}

impl From<Model> for ModelRepr {
    fn from(m: Model) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            spec: m.spec,
            weights: m.weights,
        }
    }
}

impl TryFrom<ModelRepr> for Model {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        if r.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                r.format_version
            )));
        }
        Model::from_weights(r.spec, r.weights)
    }
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let weights = vec![0.0; spec.param_count()];
        Ok(Self { spec, weights })
    }

    /// Weights uniform in `±init_scale / sqrt(fan_in)`, biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut r = rng::stream(seed, &[tag::INIT]);
        let (d, q, scale) = (model.spec.input_dim, model.spec.num_classes, model.spec.init_scale);
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let bound = scale / (fan_in as f64).sqrt();
            for v in w {
                *v = r.random_range(-bound..=bound);
            }
        };
        match model.spec.architecture {
            Architecture::Linear => fill(&mut model.weights[..q * d], d),
            Architecture::OneHidden { width: h } => {
                fill(&mut model.weights[..h * d], d);
                let w2 = h * d + h;
                fill(&mut model.weights[w2..w2 + q * h], h);
            }
        }
        Ok(model)
    }

    pub fn from_weights(spec: ModelSpec, weights: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model weights must be finite"));
        }
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Raw class scores. Panics on a wrong input length; use [`predict`] for a
    /// checked call.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let (d, q) = (self.spec.input_dim, self.spec.num_classes);
        let w = &self.weights;
        match self.spec.architecture {
            Architecture::Linear => affine(&w[..q * d], &w[q * d..], x),
            Architecture::OneHidden { width: h } => {
                let hidden = hidden_activations(w, d, h, x);
                let w2 = h * d + h;
                affine(&w[w2..w2 + q * h], &w[w2 + q * h..], &hidden)
            }
        }
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict_label(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Adds `weight * d CE(softmax(f(x)), target) / d theta` into `grad` and
    /// returns the unweighted cross-entropy.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        let (d, q) = (self.spec.input_dim, self.spec.num_classes);
        let w = &self.weights;
        let target_mass: f64 = target.iter().sum();
        let (probs, hidden) = match self.spec.architecture {
            Architecture::Linear => (softmax(&affine(&w[..q * d], &w[q * d..], x)), None),
            Architecture::OneHidden { width: h } => {
                let hidden = hidden_activations(w, d, h, x);
                let w2 = h * d + h;
                let logits = affine(&w[w2..w2 + q * h], &w[w2 + q * h..], &hidden);
                (softmax(&logits), Some(hidden))
            }
        };
        let loss = cross_entropy_unchecked(&probs, target);
        if weight == 0.0 {
            return loss;
        }
        let delta: Vec<f64> = probs
            .iter()
            .zip(target)
            .map(|(p, t)| weight * (p * target_mass - t))
            .collect();
        match (self.spec.architecture, hidden) {
            (Architecture::Linear, _) => {
                outer_add(&mut grad[..q * d], &delta, x);
                add(&mut grad[q * d..], &delta);
            }
            (Architecture::OneHidden { width: h }, Some(hidden)) => {
                let w2 = h * d + h;
                outer_add(&mut grad[w2..w2 + q * h], &delta, &hidden);
                add(&mut grad[w2 + q * h..], &delta);
                let w2_mat = &w[w2..w2 + q * h];
                let dpre: Vec<f64> = (0..h)
                    .map(|u| {
                        let back: f64 = (0..q).map(|c| w2_mat[c * h + u] * delta[c]).sum();
                        back * (1.0 - hidden[u] * hidden[u])
                    })
                    .collect();
                outer_add(&mut grad[..h * d], &dpre, x);
                add(&mut grad[h * d..h * d + h], &dpre);
            }
            (Architecture::OneHidden { .. }, None) => unreachable!(),
        }
        loss
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn hidden_activations(w: &[f64], d: usize, h: usize, x: &[f64]) -> Vec<f64> {
    let mut pre = affine(&w[..h * d], &w[h * d..h * d + h], x);
    pre.iter_mut().for_each(|v| *v = v.tanh());
    pre
}

fn affine(matrix: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    bias.iter()
        .enumerate()
        .map(|(r, b)| b + matrix[r * cols..(r + 1) * cols].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn outer_add(dst: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (r, &a) in rows.iter().enumerate() {
        for (g, &c) in dst[r * n..(r + 1) * n].iter_mut().zip(cols) {
            *g += a * c;
        }
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    // First maximum wins, so ties go to the lowest index.
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class distribution and argmax label (lowest index on ties).
pub fn predict(model: &Model, features: &[f64]) -> Result<(Vec<f64>, usize)> {
    model.check_input(features)?;
    let logits = model.logits(features);
    Ok((softmax(&logits), argmax(&logits)))
}

/// `-sum_i target_i * ln(max(predicted_i, 1e-12))`.
pub fn cross_entropy(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: predicted.len(),
            actual: target.len(),
        });
    }
    Ok(cross_entropy_unchecked(predicted, target))
}

fn cross_entropy_unchecked(predicted: &[f64], target: &[f64]) -> f64 {
    let ce: f64 = predicted
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(LOG_FLOOR).ln())
        .sum();
    // -0.0 from all-zero terms reads badly in artifacts.
    ce + 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_gradient(model: &Model, x: &[f64], target: &[f64]) -> Vec<f64> {
        let step = 1e-5;
        (0..model.weights.len())
            .map(|i| {
                let mut plus = model.clone();
                plus.weights[i] += step;
                let mut minus = model.clone();
                minus.weights[i] -= step;
                let lp = cross_entropy(&plus.probabilities(x), target).unwrap();
                let lm = cross_entropy(&minus.probabilities(x), target).unwrap();
                (lp - lm) / (2.0 * step)
            })
            .collect()
    }

    fn check_gradient(spec: ModelSpec, seed: u64) {
        let mut r = rng::stream(seed, &[99]);
        let mut model = Model::init(spec.clone(), seed).unwrap();
        // Non-zero biases exercise every parameter.
        model.weights.iter_mut().for_each(|w| *w += r.random_range(-0.3..0.3));
        let x: Vec<f64> = (0..spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let raw: Vec<f64> = (0..spec.num_classes).map(|_| r.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let target: Vec<f64> = raw.iter().map(|v| v / total).collect();

        let mut analytic = vec![0.0; model.weights.len()];
        model.accumulate_gradient(&x, &target, 1.0, &mut analytic);
        let numeric = numeric_gradient(&model, &x, &target);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-4 || (a - n).abs() < 1e-9, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let d = 1 + (seed as usize % 5);
            let q = 2 + (seed as usize % 3);
            check_gradient(ModelSpec::linear(d, q), seed);
            check_gradient(ModelSpec::one_hidden(d, q, 1 + (seed as usize % 8)), seed);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = Model::zeros(ModelSpec::linear(3, 4)).unwrap();
        let (p, label) = predict(&model, &[1.0, -2.0, 0.5]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert_eq!(label, 0);
        assert!(predict(&model, &[1.0]).is_err());
    }

    #[test]
    fn softmax_normalizes() {
        let model = Model::init(ModelSpec::one_hidden(4, 5, 6), 3).unwrap();
        let mut r = rng::stream(3, &[]);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-10.0..10.0)).collect();
            let (p, _) = predict(&model, &x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let p = softmax(&[0.0, 10.0]);
        assert!(p[1] >= 0.9999);
        assert_eq!(argmax(&[0.0, 10.0]), 1);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let uniform = vec![0.1; 10];
        let mut onehot = vec![0.0; 10];
        onehot[4] = 1.0;
        assert!((cross_entropy(&uniform, &onehot).unwrap() - 10f64.ln()).abs() < 1e-12);
        let soft = cross_entropy(&[0.7, 0.3], &[0.7, 0.3]).unwrap();
        assert!((soft - 0.610864).abs() < 1e-6);
        assert!(cross_entropy(&[0.5, 0.5], &[1.0]).is_err());
        // Clamped, not infinite.
        assert!(cross_entropy(&[0.0, 1.0], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let model = Model::init(ModelSpec::one_hidden(3, 2, 4), 11).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: Model = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
        let bad = text.replace("\"format_version\":1", "\"format_version\":9");
        assert!(serde_json::from_str::<Model>(&bad).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(ModelSpec::linear(10, 4).param_count(), 44);
        assert_eq!(ModelSpec::one_hidden(10, 4, 8).param_count(), 88 + 36);
        assert!(Model::from_weights(ModelSpec::linear(2, 2), vec![0.0; 5]).is_err());
        assert!(Model::zeros(ModelSpec::one_hidden(2, 2, 0)).is_err());
    }
}
