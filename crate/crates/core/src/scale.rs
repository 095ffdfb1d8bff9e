//! Penetration scaling: raw audience counts divided by the platform's
//! country-level penetration (platform total / population), so countries
//! with very different platform adoption become comparable.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::datamodel::{AgeBucket, AudienceCell, CountryCode, Gender, Snapshot};

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("country {country} has no penetration entry")]
    MissingCountry { country: CountryCode },
    #[error("country {country} has a platform total but zero population")]
    ZeroPopulation { country: CountryCode },
}

/// Why a country has no penetration entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoPopulation,
    NoPlatformTotal,
    ZeroPlatformTotal,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::NoPopulation => "no population figure",
            SkipReason::NoPlatformTotal => "no platform total",
            SkipReason::ZeroPlatformTotal => "zero platform total",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Skip {
    pub country: CountryCode,
    pub reason: SkipReason,
}

/// Per-country penetration ratios; every stored value is positive and finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PenetrationTable {
    values: BTreeMap<CountryCode, f64>,
}

impl PenetrationTable {
    pub fn get(&self, country: CountryCode) -> Option<f64> {
        self.values.get(&country).copied()
    }

    pub fn contains(&self, country: CountryCode) -> bool {
        self.values.contains_key(&country)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CountryCode, f64)> + '_ {
        self.values.iter().map(|(&c, &v)| (c, v))
    }
}

/// Penetration table plus the countries that could not get an entry.
#[derive(Debug)]
pub struct PenetrationResult {
    pub table: PenetrationTable,
    pub skipped: Vec<Skip>,
}

/// Computes platform_total / population per country. Countries present in
/// only one input, or with a zero platform total, are skipped and listed;
/// a zero population alongside a platform total is a hard error.
pub fn penetration(
    platform_totals: &BTreeMap<CountryCode, u64>,
    populations: &BTreeMap<CountryCode, u64>,
) -> Result<PenetrationResult, ScaleError> {
    let mut values = BTreeMap::new();
    let mut skipped = Vec::new();

    for (&country, &total) in platform_totals {
        match populations.get(&country) {
            None => skipped.push(Skip { country, reason: SkipReason::NoPopulation }),
            Some(0) => return Err(ScaleError::ZeroPopulation { country }),
            Some(&population) => {
                if total == 0 {
                    skipped.push(Skip { country, reason: SkipReason::ZeroPlatformTotal });
                } else {
                    values.insert(country, total as f64 / population as f64);
                }
            }
        }
    }
    for &country in populations.keys() {
        if !platform_totals.contains_key(&country) {
            skipped.push(Skip { country, reason: SkipReason::NoPlatformTotal });
        }
    }
    skipped.sort_by_key(|s| s.country);

    Ok(PenetrationResult { table: PenetrationTable { values }, skipped })
}

/// A raw count divided by its country's penetration. `gender`/`age` are
/// `None` on aggregated rows; `value` is zero exactly when the underlying
/// raw count was zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledEstimate {
    pub country: CountryCode,
    pub gender: Option<Gender>,
    pub age: Option<AgeBucket>,
    pub value: f64,
    pub censored: bool,
}

/// Scales one audience cell.
pub fn scale_estimate(
    cell: &AudienceCell,
    table: &PenetrationTable,
) -> Result<ScaledEstimate, ScaleError> {
    let pen = table
        .get(cell.country)
        .ok_or(ScaleError::MissingCountry { country: cell.country })?;
    Ok(ScaledEstimate {
        country: cell.country,
        gender: Some(cell.gender),
        age: Some(cell.age),
        value: cell.count as f64 / pen,
        censored: cell.censored,
    })
}

/// Grouping level for [`country_totals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Breakdown {
    Total,
    ByGender,
    ByGenderAge,
}

/// Sums raw counts over the collapsed dimensions per country, then scales
/// the sum (sum-then-scale, so group values and their country total agree
/// up to float rounding). Groups come from the snapshot's cells; the
/// aggregate is censored when every contributing count was zero.
pub fn country_totals(
    snapshot: &Snapshot,
    table: &PenetrationTable,
    breakdown: Breakdown,
) -> Result<Vec<ScaledEstimate>, ScaleError> {
    let mut sums: BTreeMap<(CountryCode, Option<Gender>, Option<AgeBucket>), u64> =
        BTreeMap::new();
    for cell in &snapshot.cells {
        let key = match breakdown {
            Breakdown::Total => (cell.country, None, None),
            Breakdown::ByGender => (cell.country, Some(cell.gender), None),
            Breakdown::ByGenderAge => (cell.country, Some(cell.gender), Some(cell.age)),
        };
        *sums.entry(key).or_insert(0) += cell.count;
    }

    let mut estimates = Vec::with_capacity(sums.len());
    for ((country, gender, age), sum) in sums {
        let pen =
            table.get(country).ok_or(ScaleError::MissingCountry { country })?;
        estimates.push(ScaledEstimate {
            country,
            gender,
            age,
            value: sum as f64 / pen,
            censored: sum == 0,
        });
    }
    Ok(estimates)
}
