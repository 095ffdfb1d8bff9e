//! Derived summaries: seniority composition, cross-country role medians,
//! and the rank-correlation check of scaled audience totals against an
//! external benchmark.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::datamodel::{CountryCode, Gender, SenioritySlice, SeniorityRole};
use crate::stats::{spearman, Correlation, StatsError};
use crate::temporal;

/// Countries both sides must share before a rank correlation is meaningful.
pub const MIN_VALIDATION_PAIRS: usize = 4;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} overlapping countries, got {got}")]
    InsufficientOverlap { needed: usize, got: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One country/gender slice expressed as percentages of its own total.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub country: CountryCode,
    pub gender: Gender,
    /// Percentage per role; all ten roles present, summing to 100 unless
    /// the slice is empty.
    pub shares: BTreeMap<SeniorityRole, f64>,
    /// True when every count in the slice is zero; shares are then all
    /// zero and the row is excluded from medians by default.
    pub empty: bool,
}

/// Converts absolute role counts to within-slice percentages
/// (100 * count / total). A slice with zero total keeps all-zero shares
/// and is flagged empty rather than dropped, so callers can decide.
pub fn seniority_shares(slices: &[SenioritySlice]) -> Vec<ShareRow> {
    slices
        .iter()
        .map(|slice| {
            let total = slice.total();
            let shares = slice
                .counts
                .iter()
                .map(|(&role, &count)| {
                    let pct =
                        if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
                    (role, pct)
                })
                .collect();
            ShareRow { country: slice.country, gender: slice.gender, shares, empty: total == 0 }
        })
        .collect()
}

/// Median share of one role across countries, per gender.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianRow {
    pub gender: Gender,
    pub role: SeniorityRole,
    pub median: f64,
    /// Countries that contributed to this median.
    pub n: usize,
}

/// Cross-country medians per (gender, role), ordered that way. Empty
/// slices are skipped unless `include_empty` is set; a (gender, role)
/// combination with no contributing countries yields no row.
pub fn seniority_medians(shares: &[ShareRow], include_empty: bool) -> Vec<MedianRow> {
    let mut groups: BTreeMap<(Gender, SeniorityRole), Vec<f64>> = BTreeMap::new();
    for row in shares {
        if row.empty && !include_empty {
            continue;
        }
        for (&role, &pct) in &row.shares {
            groups.entry((row.gender, role)).or_default().push(pct);
        }
    }
    groups
        .into_iter()
        .map(|((gender, role), values)| {
            let median = temporal::median(&values).expect("group is non-empty");
            MedianRow { gender, role, median, n: values.len() }
        })
        .collect()
}

/// One country present on both sides of the benchmark comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPair {
    pub country: CountryCode,
    pub estimate: f64,
    pub benchmark: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationResult {
    /// Overlapping countries, ascending by code.
    pub pairs: Vec<ValidationPair>,
    pub correlation: Correlation,
}

/// Inner-joins scaled estimates with a benchmark series on country and
/// rank-correlates the two. Countries missing from either side are
/// silently dropped; fewer than [`MIN_VALIDATION_PAIRS`] survivors is an
/// error.
pub fn validation_join(
    estimates: &BTreeMap<CountryCode, f64>,
    benchmark: &BTreeMap<CountryCode, f64>,
) -> Result<ValidationResult, AnalysisError> {
    let pairs: Vec<ValidationPair> = estimates
        .iter()
        .filter_map(|(country, &estimate)| {
            benchmark
                .get(country)
                .map(|&b| ValidationPair { country: *country, estimate, benchmark: b })
        })
        .collect();
    if pairs.len() < MIN_VALIDATION_PAIRS {
        return Err(AnalysisError::InsufficientOverlap {
            needed: MIN_VALIDATION_PAIRS,
            got: pairs.len(),
        });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.estimate).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.benchmark).collect();
    let correlation = spearman(&xs, &ys)?;
    Ok(ValidationResult { pairs, correlation })
}
