//! Selection math shared by parent and survival selection.

use rand::Rng;
use thiserror::Error;

/// Tolerance accepted on the total mass of a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("empty score vector")]
    Empty,
    #[error("score {value} at index {index} is negative or not finite")]
    InvalidScore { index: usize, value: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("draw count must be at least 1")]
    ZeroCount,
    #[error("need at least {needed} candidates, found {found}")]
    TooFew { needed: usize, found: usize },
}

/// Roulette-wheel weights: scores divided by their sum.
///
/// An all-zero vector maps to the uniform distribution so that a population
/// where every prompt scored 0 can still be sampled.
pub fn normalize_weights(scores: &[f64]) -> Result<Vec<f64>, SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::Empty);
    }
    for (index, &value) in scores.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(SelectionError::InvalidScore { index, value });
        }
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        let uniform = 1.0 / scores.len() as f64;
        return Ok(vec![uniform; scores.len()]);
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// `exp(s_i / t) / sum_j exp(s_j / t)`, evaluated after subtracting the max score.
pub fn tempered_softmax(scores: &[f64], temperature: f64) -> Result<Vec<f64>, SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::Empty);
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(SelectionError::InvalidTemperature(temperature));
    }
    for (index, &value) in scores.iter().enumerate() {
        if !value.is_finite() {
            return Err(SelectionError::InvalidScore { index, value });
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn validate_probabilities(probabilities: &[f64]) -> Result<(), SelectionError> {
    if probabilities.is_empty() {
        return Err(SelectionError::Empty);
    }
    if let Some((i, p)) = probabilities
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(SelectionError::InvalidProbabilities(format!(
            "entry {i} is {p}"
        )));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(SelectionError::InvalidProbabilities(format!(
            "sums to {sum}"
        )));
    }
    Ok(())
}

/// Draws `count` i.i.d. indices from `probabilities`.
///
/// Each draw consumes exactly one uniform `f64` from `rng`, so the stream
/// position after a call depends only on `count`.
pub fn weighted_draw<R: Rng + ?Sized>(
    probabilities: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SelectionError> {
    validate_probabilities(probabilities)?;
    if count == 0 {
        return Err(SelectionError::ZeroCount);
    }
    // Fall back to the last index with positive mass so rounding in the
    // cumulative sum can never select a zero-probability entry.
    let last_positive = probabilities
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("validated vector has positive mass");
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = last_positive;
        for (i, &p) in probabilities.iter().enumerate() {
            acc += p;
            if p > 0.0 && u < acc {
                chosen = i;
                break;
            }
        }
        out.push(chosen);
    }
    Ok(out)
}
