//! Changes between snapshot dates: absolute and relative diffs of scaled
//! estimates per (country, gender) series, and a boxplot-style stability
//! summary of the relative changes across countries.
//!
//! Quartiles use the median-of-halves convention: the median splits the
//! sorted values, the middle value is excluded from both halves when the
//! count is odd, and q1/q3 are the medians of the halves. Outliers are
//! values beyond 1.5 IQR fences.

use chrono::NaiveDate;
use thiserror::Error;

use crate::datamodel::{CountryCode, Gender};
use crate::scale::ScaledEstimate;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("estimates key mismatch: {left} vs {right}")]
    KeyMismatch { left: String, right: String },
    #[error("newer date {newer} precedes older date {older}")]
    DateOrder { older: NaiveDate, newer: NaiveDate },
    #[error("country {country}: relative change undefined on a zero baseline")]
    ZeroBaseline { country: CountryCode },
    #[error("stability summary needs at least {needed} relative changes, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("records mix windows or genders: {details}")]
    MixedRecords { details: String },
}

/// Change of one series between two snapshot dates. `pct_diff` is absent
/// when the older value was zero (censored baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffRecord {
    pub country: CountryCode,
    pub gender: Option<Gender>,
    pub older_date: NaiveDate,
    pub newer_date: NaiveDate,
    pub abs_diff: f64,
    pub pct_diff: Option<f64>,
}

fn key_of(estimate: &ScaledEstimate) -> String {
    format!(
        "{}/{}/{}",
        estimate.country,
        estimate.gender.map_or("any".to_string(), |g| g.to_string()),
        estimate.age.map_or("any".to_string(), |a| a.to_string()),
    )
}

fn check_pair(
    older: &ScaledEstimate,
    older_date: NaiveDate,
    newer: &ScaledEstimate,
    newer_date: NaiveDate,
) -> Result<(), TemporalError> {
    if (older.country, older.gender, older.age) != (newer.country, newer.gender, newer.age) {
        return Err(TemporalError::KeyMismatch { left: key_of(older), right: key_of(newer) });
    }
    if newer_date < older_date {
        return Err(TemporalError::DateOrder { older: older_date, newer: newer_date });
    }
    Ok(())
}

/// newer - older for one matched series, with the relative change attached
/// when the baseline allows it.
pub fn diff(
    older: &ScaledEstimate,
    older_date: NaiveDate,
    newer: &ScaledEstimate,
    newer_date: NaiveDate,
) -> Result<DiffRecord, TemporalError> {
    check_pair(older, older_date, newer, newer_date)?;
    let pct = if older.value == 0.0 {
        None
    } else {
        Some((newer.value - older.value) / older.value)
    };
    Ok(DiffRecord {
        country: older.country,
        gender: older.gender,
        older_date,
        newer_date,
        abs_diff: newer.value - older.value,
        pct_diff: pct,
    })
}

/// (newer - older) / older; fails on a zero baseline.
pub fn pct_diff(older: &ScaledEstimate, newer: &ScaledEstimate) -> Result<f64, TemporalError> {
    if (older.country, older.gender, older.age) != (newer.country, newer.gender, newer.age) {
        return Err(TemporalError::KeyMismatch { left: key_of(older), right: key_of(newer) });
    }
    if older.value == 0.0 {
        return Err(TemporalError::ZeroBaseline { country: older.country });
    }
    Ok((newer.value - older.value) / older.value)
}

/// Median of a sorted slice: middle value, or the mean of the two middles.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median of an unsorted collection; `None` when empty. This is the one
/// median convention used across the pipeline.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Some(median_sorted(&sorted))
}

/// First and third quartiles by median-of-halves, excluding the middle
/// element when the count is odd. Needs at least two values.
pub fn quartiles(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let lower = &sorted[..n / 2];
    let upper = &sorted[n.div_ceil(2)..];
    (median_sorted(lower), median_sorted(upper))
}

/// A value outside the 1.5 IQR fences, tagged with its country.
#[derive(Debug, Clone, PartialEq)]
pub struct Outlier {
    pub country: CountryCode,
    pub pct_diff: f64,
}

/// Boxplot-style summary of relative changes across countries for one
/// (window, gender) group.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySummary {
    pub older_date: NaiveDate,
    pub newer_date: NaiveDate,
    pub gender: Option<Gender>,
    /// Number of records with a defined relative change.
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Most extreme values still inside the fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<Outlier>,
}

/// Summarizes the `pct_diff`s of one record group. Records without a
/// defined relative change are ignored; all records must share the same
/// window and gender. Needs at least four usable values.
pub fn stability_summary(records: &[DiffRecord]) -> Result<StabilitySummary, TemporalError> {
    let with_pct: Vec<&DiffRecord> =
        records.iter().filter(|r| r.pct_diff.is_some()).collect();
    let Some(first) = with_pct.first() else {
        return Err(TemporalError::TooFewRecords { needed: 4, got: 0 });
    };
    for r in &with_pct {
        if (r.older_date, r.newer_date, r.gender)
            != (first.older_date, first.newer_date, first.gender)
        {
            return Err(TemporalError::MixedRecords {
                details: format!(
                    "{}..{}/{:?} vs {}..{}/{:?}",
                    first.older_date, first.newer_date, first.gender, r.older_date, r.newer_date, r.gender
                ),
            });
        }
    }
    if with_pct.len() < 4 {
        return Err(TemporalError::TooFewRecords { needed: 4, got: with_pct.len() });
    }

    let mut tagged: Vec<(f64, CountryCode)> =
        with_pct.iter().map(|r| (r.pct_diff.unwrap(), r.country)).collect();
    tagged.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).expect("finite pct").then_with(|| a.1.cmp(&b.1))
    });
    let values: Vec<f64> = tagged.iter().map(|t| t.0).collect();

    let med = median_sorted(&values);
    let (q1, q3) = quartiles(&values);
    let iqr = q3 - q1;
    let fence_low = q1 - 1.5 * iqr;
    let fence_high = q3 + 1.5 * iqr;

    let outliers: Vec<Outlier> = tagged
        .iter()
        .filter(|(v, _)| *v < fence_low || *v > fence_high)
        .map(|&(pct_diff, country)| Outlier { country, pct_diff })
        .collect();
    let inside: Vec<f64> =
        values.iter().copied().filter(|v| *v >= fence_low && *v <= fence_high).collect();
    // q1 and q3 always sit inside the fences, so `inside` is never empty
    let whisker_low = inside[0];
    let whisker_high = inside[inside.len() - 1];

    Ok(StabilitySummary {
        older_date: first.older_date,
        newer_date: first.newer_date,
        gender: first.gender,
        n: values.len(),
        q1,
        median: med,
        q3,
        iqr,
        whisker_low,
        whisker_high,
        outliers,
    })
}
