//! Expected selection precision and recall.
//!
//! A sample has true class `i` with probability `p_i` and observed label `j`
//! with probability `T_ij`. In each of the `M` passes the fold model predicts
//! class `k` with probability `C_ik`, independently across passes, so the
//! number of passes reproducing the observed label is `Binomial(M, C_ij)`.
//! Selection keeps samples with at least `t` such passes:
//!
//! ```text
//! P(CS)  = sum_i p_i T_ii
//! P(SS)  = sum_i sum_j p_i T_ij tail(M, t, C_ij)
//! P(CSS) = sum_i p_i T_ii tail(M, t, C_ii)
//! tail(M, t, c) = sum_{k=t}^{M} binom(M, k) c^k (1 - c)^(M - k)
//! ```
//!
//! With `M = t = 1` and symmetric `T`, `C` this collapses to the familiar
//! `(1-eps) q / ((1-eps) q + eps (1-q) / (Q-1))` precision and recall `q`.
//! [`FormulaMode::Literal`] evaluates the alternative printed form, in which
//! `T_ij` is raised to `M` and `C_ij` to `K`; it does not reduce to the
//! symmetric expression and is kept for comparison only.
//!
//! [`monte_carlo`] simulates the same generative model directly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sample_categorical, StochasticMatrix, ROW_SUM_TOLERANCE};
use crate::rng::{self, tag};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

const SHARD_SIZE: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub prior: Vec<f64>,
    pub transition: StochasticMatrix,
    pub confusion: StochasticMatrix,
    pub m: usize,
    pub t: usize,
    /// Only the literal formula uses `K`.
    pub k: usize,
}

impl TheoryInputs {
    /// Uniform prior, symmetric noise `eps` and symmetric confusion with diagonal `q`.
    pub fn symmetric(num_classes: usize, epsilon: f64, q: f64, m: usize, t: usize) -> Result<Self> {
        let inputs = Self {
            prior: vec![1.0 / num_classes as f64; num_classes],
            transition: StochasticMatrix::symmetric(num_classes, 1.0 - epsilon)?,
            confusion: StochasticMatrix::symmetric(num_classes, q)?,
            m,
            t,
            k: 1,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.prior.len();
        if q == 0 {
            return Err(Error::invalid("prior must be non-empty"));
        }
        if self.prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("prior entries must lie in [0, 1]"));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::invalid(format!("prior sums to {total}, not 1")));
        }
        for m in [&self.transition, &self.confusion] {
            if m.num_classes() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    actual: m.num_classes(),
                });
            }
        }
        if self.m == 0 || self.t == 0 || self.t > self.m {
            return Err(Error::invalid(format!(
                "need 0 < t <= M, got t = {}, M = {}",
                self.t, self.m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaMode {
    Corrected,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Corrected,
    Literal,
    MonteCarlo,
}

impl From<FormulaMode> for Estimator {
    fn from(m: FormulaMode) -> Self {
        match m {
            FormulaMode::Corrected => Estimator::Corrected,
            FormulaMode::Literal => Estimator::Literal,
        }
    }
}

/// Selection counts behind a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimulationCounts {
    pub n: u64,
    pub n_cs: u64,
    pub n_ss: u64,
    pub n_css: u64,
}

impl std::ops::Add for SimulationCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            n: self.n + o.n,
            n_cs: self.n_cs + o.n_cs,
            n_ss: self.n_ss + o.n_ss,
            n_css: self.n_css + o.n_css,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryResult {
    pub mode: Estimator,
    /// `None` when no sample was selected (Monte Carlo only).
    pub precision: Option<f64>,
    /// `None` when no sample was clean (Monte Carlo only).
    pub recall: Option<f64>,
    pub p_cs: f64,
    pub p_ss: f64,
    pub p_css: f64,
    /// Wilson 95% interval for the precision, Monte Carlo only.
    pub precision_ci: Option<(f64, f64)>,
    pub recall_ci: Option<(f64, f64)>,
    /// Half-width of the precision interval.
    pub ci_halfwidth: Option<f64>,
    pub n_samples: Option<u64>,
    pub counts: Option<SimulationCounts>,
}

impl TheoryResult {
    fn from_probabilities(mode: Estimator, p_cs: f64, p_ss: f64, p_css: f64) -> Result<Self> {
        if p_ss <= 0.0 {
            return Err(Error::Undefined("precision"));
        }
        if p_cs <= 0.0 {
            return Err(Error::Undefined("recall"));
        }
        Ok(Self {
            mode,
            precision: Some(p_css / p_ss),
            recall: Some(p_css / p_cs),
            p_cs,
            p_ss,
            p_css,
            precision_ci: None,
            recall_ci: None,
            ci_halfwidth: None,
            n_samples: None,
            counts: None,
        })
    }

    /// Whether this Monte Carlo estimate lies within `k` binomial standard
    /// errors of a reference precision and recall. The standard errors are
    /// those of a proportion equal to the reference over the simulated
    /// denominators (`|SS|` for precision, `|CS|` for recall).
    pub fn brackets(&self, reference: &TheoryResult, k: f64) -> bool {
        let (Some(c), Some(p), Some(r)) = (self.counts, self.precision, self.recall) else {
            return false;
        };
        let (Some(rp), Some(rr)) = (reference.precision, reference.recall) else {
            return false;
        };
        within_standard_errors(p, rp, c.n_ss, k) && within_standard_errors(r, rr, c.n_cs, k)
    }
}

/// `|estimate - reference| <= k * sqrt(reference (1 - reference) / n)`.
/// References outside `[0, 1]` can never be bracketed.
pub fn within_standard_errors(estimate: f64, reference: f64, n: u64, k: f64) -> bool {
    if !(0.0..=1.0).contains(&reference) || n == 0 {
        return false;
    }
    let se = (reference * (1.0 - reference) / n as f64).sqrt();
    (estimate - reference).abs() <= k * se
}

/// Wilson score interval for `successes / n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Some(((centre - half).max(0.0), (centre + half).min(1.0)))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `P(Binomial(m, c) >= t)`.
pub fn binomial_tail(m: usize, t: usize, c: f64) -> f64 {
    (t..=m)
        .map(|k| binomial(m, k) * c.powi(k as i32) * (1.0 - c).powi((m - k) as i32))
        .sum()
}

/// Expected precision and recall of E-NKCVS selection.
pub fn closed_form(inputs: &TheoryInputs, mode: FormulaMode) -> Result<TheoryResult> {
    inputs.validate()?;
    let q = inputs.num_classes();
    let (p, tr, cm) = (&inputs.prior, &inputs.transition, &inputs.confusion);
    let p_cs: f64 = (0..q).map(|i| p[i] * tr.get(i, i)).sum();
    let (p_ss, p_css) = match mode {
        FormulaMode::Corrected => {
            let (m, t) = (inputs.m, inputs.t);
            let p_ss = (0..q)
                .flat_map(|i| (0..q).map(move |j| (i, j)))
                .map(|(i, j)| p[i] * tr.get(i, j) * binomial_tail(m, t, cm.get(i, j)))
                .sum();
            let p_css = (0..q)
                .map(|i| p[i] * tr.get(i, i) * binomial_tail(m, t, cm.get(i, i)))
                .sum();
            (p_ss, p_css)
        }
        FormulaMode::Literal => {
            let (m, t, k) = (inputs.m as i32, inputs.t, inputs.k as i32);
            let term = |i: usize, j: usize, kk: usize| {
                p[i] * tr.get(i, j).powi(m) * cm.get(i, j).powi(k) * (1.0 - cm.get(i, j)).powi(m - kk as i32)
            };
            let mut p_ss = 0.0;
            let mut p_css = 0.0;
            for kk in t..=inputs.m {
                let b = binomial(inputs.m, kk);
                p_css += b * (0..q).map(|i| term(i, i, kk)).sum::<f64>();
                p_ss += b * (0..q)
                    .flat_map(|i| (0..q).map(move |j| (i, j)))
                    .map(|(i, j)| term(i, j, kk))
                    .sum::<f64>();
            }
            (p_ss, p_css)
        }
    };
    TheoryResult::from_probabilities(mode.into(), p_cs, p_ss, p_css)
}

/// Single-pass precision/recall for symmetric noise and confusion.
pub fn corollary_symmetric(num_classes: usize, epsilon: f64, q: f64, m: usize) -> Result<TheoryResult> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if !(0.0..=1.0).contains(&epsilon) || !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("epsilon and q must lie in [0, 1]"));
    }
    if m != 1 {
        return Err(Error::invalid("the symmetric closed form holds for M = 1 only"));
    }
    let clean = (1.0 - epsilon) * q;
    let noisy = epsilon * (1.0 - q) / (num_classes - 1) as f64;
    TheoryResult::from_probabilities(Estimator::Corrected, 1.0 - epsilon, clean + noisy, clean)
}

fn simulate_shard(inputs: &TheoryInputs, n: u64, seed: u64, shard: u64) -> SimulationCounts {
    let mut r = rng::stream(seed, &[tag::MONTE_CARLO, shard]);
    let mut counts = SimulationCounts {
        n,
        ..Default::default()
    };
    for _ in 0..n {
        let truth = sample_categorical(&inputs.prior, &mut r);
        let observed = inputs.transition.sample_row(truth, &mut r);
        let hits = (0..inputs.m)
            .filter(|_| inputs.confusion.sample_row(truth, &mut r) == observed)
            .count();
        let clean = observed == truth;
        let selected = hits >= inputs.t;
        counts.n_cs += u64::from(clean);
        counts.n_ss += u64::from(selected);
        counts.n_css += u64::from(clean && selected);
    }
    counts
}

/// Simulates `n` samples of the generative model. Work is split into fixed
/// shards with their own streams, so the result depends only on `seed`.
pub fn monte_carlo(inputs: &TheoryInputs, n: u64, seed: u64) -> Result<TheoryResult> {
    inputs.validate()?;
    if n == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one sample"));
    }
    let shards = n.div_ceil(SHARD_SIZE);
    let counts = (0..shards)
        .into_par_iter()
        .map(|s| {
            let size = SHARD_SIZE.min(n - s * SHARD_SIZE);
            simulate_shard(inputs, size, seed, s)
        })
        .reduce(SimulationCounts::default, |a, b| a + b);

    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let precision_ci = wilson_interval(counts.n_css, counts.n_ss, Z_95);
    let recall_ci = wilson_interval(counts.n_css, counts.n_cs, Z_95);
    if counts.n_ss == 0 {
        log::warn!("no sample selected in {n} draws; precision is undefined");
    }
    Ok(TheoryResult {
        mode: Estimator::MonteCarlo,
        precision: ratio(counts.n_css, counts.n_ss),
        recall: ratio(counts.n_css, counts.n_cs),
        p_cs: counts.n_cs as f64 / n as f64,
        p_ss: counts.n_ss as f64 / n as f64,
        p_css: counts.n_css as f64 / n as f64,
        precision_ci,
        recall_ci,
        ci_halfwidth: precision_ci.map(|(lo, hi)| (hi - lo) / 2.0),
        n_samples: Some(n),
        counts: Some(counts),
    })
}
