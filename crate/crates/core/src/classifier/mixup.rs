use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub features: Vec<f64>,
    pub soft_label: Vec<f64>,
    /// Weight on the anchor sample, always in `[0.5, 1]`.
    pub lambda_prime: f64,
}

/// `Beta(alpha, alpha)` as `X / (X + Y)` with `X, Y ~ Gamma(alpha, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(format!("Beta({alpha}, {alpha}): {e}")))?;
    let x: f64 = gamma.sample(rng);
    let y: f64 = gamma.sample(rng);
    let total = x + y;
    if total > 0.0 {
        Ok(x / total)
    } else {
        // Both draws underflowed; the mass sits at the endpoints.
        Ok(if rng.random::<bool>() { 1.0 } else { 0.0 })
    }
}

/// Interpolates each `(features, label)` pair in the batch with a partner
/// drawn uniformly (with replacement, self included) from the same batch.
/// `lambda' = max(lambda, 1 - lambda)` with `lambda ~ Beta(alpha, alpha)`, so
/// the anchor always dominates. `alpha = 0` returns the batch unchanged.
pub fn mixup_batch<R: Rng + ?Sized>(
    batch: &[(&[f64], &[f64])],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<MixedSample>> {
    if batch.is_empty() {
        return Err(Error::invalid("mixup needs a non-empty batch"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("mixup alpha {alpha} must be >= 0")));
    }
    batch
        .iter()
        .map(|&(x1, y1)| {
            if alpha == 0.0 {
                return Ok(MixedSample {
                    features: x1.to_vec(),
                    soft_label: y1.to_vec(),
                    lambda_prime: 1.0,
                });
            }
            let (x2, y2) = batch[rng.random_range(0..batch.len())];
            let lambda = sample_beta(alpha, rng)?;
            let lp = lambda.max(1.0 - lambda);
            Ok(MixedSample {
                features: blend(x1, x2, lp),
                soft_label: blend(y1, y2, lp),
                lambda_prime: lp,
            })
        })
        .collect()
}

fn blend(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| w * u + (1.0 - w) * v).collect()
}
