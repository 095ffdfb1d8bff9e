//! Per-feature contributions for fitted linear models.
//!
//! For a linear model the Shapley decomposition has a closed form:
//! phi_j = beta_j (x_j - mean_j), with the training feature means as the
//! background point. The coalition-enumeration form is kept as an
//! independent oracle; both satisfy local accuracy (base value plus
//! contributions equals the prediction), the dummy, symmetry and
//! efficiency axioms.

use thiserror::Error;

use crate::datamodel::{CountryCode, CountryPanel};
use crate::stats::{FitResult, Predictor, StatsError};

/// Feature count cap for coalition enumeration (2^p subsets).
pub const BRUTEFORCE_MAX_FEATURES: usize = 20;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("expected {expected} feature values, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("coalition enumeration supports up to {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Closed-form contributions: phi_j = beta_j (x_j - mean_j).
/// `x` lives in the same space as the coefficients (standardized, for
/// models fitted here).
pub fn linear_contributions(
    coefficients: &[f64],
    feature_means: &[f64],
    x: &[f64],
) -> Result<Vec<f64>, AttributionError> {
    if coefficients.len() != feature_means.len() {
        return Err(AttributionError::FeatureCount {
            expected: coefficients.len(),
            got: feature_means.len(),
        });
    }
    if x.len() != coefficients.len() {
        return Err(AttributionError::FeatureCount { expected: coefficients.len(), got: x.len() });
    }
    Ok(coefficients
        .iter()
        .zip(feature_means)
        .zip(x)
        .map(|((b, m), xi)| b * (xi - m))
        .collect())
}

/// Shapley values by explicit coalition enumeration with the exact
/// weights |S|! (p - |S| - 1)! / p!. The value of a coalition fills
/// absent features with their means:
/// v(S) = intercept + sum_{j in S} beta_j x_j + sum_{j not in S} beta_j mean_j.
/// Exponential in the feature count; meant as an oracle, not for production.
pub fn bruteforce_contributions(
    coefficients: &[f64],
    intercept: f64,
    feature_means: &[f64],
    x: &[f64],
) -> Result<Vec<f64>, AttributionError> {
    let p = coefficients.len();
    if p > BRUTEFORCE_MAX_FEATURES {
        return Err(AttributionError::TooManyFeatures { got: p, max: BRUTEFORCE_MAX_FEATURES });
    }
    if feature_means.len() != p {
        return Err(AttributionError::FeatureCount { expected: p, got: feature_means.len() });
    }
    if x.len() != p {
        return Err(AttributionError::FeatureCount { expected: p, got: x.len() });
    }

    let mut factorial = [1.0f64; BRUTEFORCE_MAX_FEATURES + 1];
    for i in 1..=BRUTEFORCE_MAX_FEATURES {
        factorial[i] = factorial[i - 1] * i as f64;
    }

    let value = |mask: u32| -> f64 {
        let mut v = intercept;
        for j in 0..p {
            let filled = if mask & (1 << j) != 0 { x[j] } else { feature_means[j] };
            v += coefficients[j] * filled;
        }
        v
    };

    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        for subset in 0u32..(1 << others.len()) {
            let mut mask = 0u32;
            let mut size = 0usize;
            for (bit, &k) in others.iter().enumerate() {
                if subset & (1 << bit) != 0 {
                    mask |= 1 << k;
                    size += 1;
                }
            }
            let weight =
                factorial[size] * factorial[p - size - 1] / factorial[p];
            *phi_j += weight * (value(mask | (1 << j)) - value(mask));
        }
    }
    Ok(phi)
}

/// Contributions for one raw panel row under a fitted model: the row is
/// standardized with the training column statistics stored in the fit,
/// then decomposed in closed form.
pub fn shap_linear(fit: &FitResult, raw_row: &[f64]) -> Result<Vec<f64>, AttributionError> {
    let z = fit.standardize_row(raw_row)?;
    linear_contributions(&fit.coefficients, &fit.feature_means, &z)
}

/// One country's decomposition: standardized feature values, one
/// contribution per predictor, and the model output they sum to.
#[derive(Debug, Clone)]
pub struct CountryContributions {
    pub country: CountryCode,
    /// Standardized feature values, in spec predictor order.
    pub features: Vec<f64>,
    pub contributions: Vec<f64>,
    pub prediction: f64,
}

/// A predictor ranked by mean absolute contribution (rank 1 = largest).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    pub predictor: Predictor,
    pub mean_abs: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct ShapReport {
    /// Model output at the background point (the training feature means).
    pub base_value: f64,
    pub rows: Vec<CountryContributions>,
    /// Importance per predictor, descending by mean absolute contribution;
    /// ties keep spec order.
    pub importance: Vec<FeatureImportance>,
}

/// Decomposes every panel row under the fitted model and summarizes
/// feature importance as mean absolute contribution.
pub fn shap_report(fit: &FitResult, panel: &CountryPanel) -> Result<ShapReport, AttributionError> {
    let p = fit.spec.predictors.len();
    let base_value = fit.intercept
        + fit
            .coefficients
            .iter()
            .zip(&fit.feature_means)
            .map(|(b, m)| b * m)
            .sum::<f64>();

    let mut rows = Vec::with_capacity(panel.rows.len());
    let mut abs_sums = vec![0.0; p];
    for row in &panel.rows {
        let raw: Vec<f64> = fit.spec.predictors.iter().map(|pr| pr.value(row)).collect();
        let z = fit.standardize_row(&raw)?;
        let contributions = linear_contributions(&fit.coefficients, &fit.feature_means, &z)?;
        for (sum, phi) in abs_sums.iter_mut().zip(&contributions) {
            *sum += phi.abs();
        }
        rows.push(CountryContributions {
            country: row.country,
            prediction: fit.predict_standardized(&z),
            features: z,
            contributions,
        });
    }

    let n = panel.rows.len().max(1) as f64;
    let mut importance: Vec<FeatureImportance> = fit
        .spec
        .predictors
        .iter()
        .zip(&abs_sums)
        .map(|(&predictor, &sum)| FeatureImportance { predictor, mean_abs: sum / n, rank: 0 })
        .collect();
    importance.sort_by(|a, b| b.mean_abs.partial_cmp(&a.mean_abs).expect("finite mean_abs"));
    for (i, item) in importance.iter_mut().enumerate() {
        item.rank = i + 1;
    }

    Ok(ShapReport { base_value, rows, importance })
}
