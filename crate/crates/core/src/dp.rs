//! Differential-privacy primitives: Laplace noise, the exponential mechanism and
//! the budget split used by the private Bayesian-network synthesizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total budget and the share of it spent on structure selection; the remainder
/// goes to the conditional tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyBudget {
    pub epsilon_total: f64,
    #[serde(default = "default_structure_fraction")]
    pub structure_fraction: f64,
}

pub const DEFAULT_STRUCTURE_FRACTION: f64 = 0.5;

fn default_structure_fraction() -> f64 {
    DEFAULT_STRUCTURE_FRACTION
}

impl PrivacyBudget {
    pub fn new(epsilon_total: f64) -> Result<Self> {
        let b = PrivacyBudget {
            epsilon_total,
            structure_fraction: DEFAULT_STRUCTURE_FRACTION,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_total > 0.0 && self.epsilon_total.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be finite and > 0, got {}", self.epsilon_total)));
        }
        if !(self.structure_fraction > 0.0 && self.structure_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "structure_fraction must lie in (0, 1), got {}",
                self.structure_fraction
            )));
        }
        Ok(())
    }

    pub fn structure_epsilon(&self) -> f64 {
        self.epsilon_total * self.structure_fraction
    }

    pub fn tables_epsilon(&self) -> f64 {
        self.epsilon_total * (1.0 - self.structure_fraction)
    }
}

/// One draw from Laplace(0, scale) by inverting the CDF of a uniform draw.
pub fn laplace_noise<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidScale(scale));
    }
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        // u = -0.5 would give ln(0)
        if u > -0.5 {
            return Ok(-scale * u.signum() * (1.0 - 2.0 * u.abs()).ln());
        }
    }
}

/// Samples an index with probability proportional to `exp(epsilon * score / (2 * sensitivity))`.
pub fn exponential_mechanism<R: Rng + ?Sized>(scores: &[f64], sensitivity: f64, epsilon: f64, rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::InvalidSensitivity(sensitivity));
    }
    if !(epsilon >= 0.0) || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("exponential mechanism needs epsilon >= 0 and finite scores".into()));
    }
    let weights = selection_probabilities(scores, sensitivity, epsilon);
    Ok(crate::rng::sample_weighted(&weights, rng))
}

/// Normalised selection probabilities of the exponential mechanism.
pub fn selection_probabilities(scores: &[f64], sensitivity: f64, epsilon: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let factor = epsilon / (2.0 * sensitivity);
    let w: Vec<f64> = scores.iter().map(|s| ((s - max) * factor).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Sensitivity of the empirical mutual information between a non-binary child and
/// its parents over `n` records, as used by PrivBayes.
pub fn privbayes_mi_sensitivity(n: usize) -> f64 {
    let n = n.max(2) as f64;
    (2.0 / n) * ((n + 1.0) / 2.0).ln() + ((n - 1.0) / n) * ((n + 1.0) / (n - 1.0)).ln()
}
