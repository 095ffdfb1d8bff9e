//! Recorded audience counts, replayable by canonical query key.
//!
//! Live count collection is out of scope here; instead, previously
//! recorded responses are stored under a canonical key and replayed on
//! demand. Replay applies the platform's reporting rule: a stored count
//! below the threshold comes back as zero, so downstream code sees
//! exactly what a live query would have returned.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::IngestError;
use crate::datamodel::{AgeBucket, CountryCode, Gender, SeniorityRole, CENSOR_THRESHOLD};

/// Placeholder for a dimension the query does not constrain.
const ANY: &str = "any";

/// One audience query: a country plus optional filters. `None` means the
/// dimension is not constrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudienceQuery {
    pub country: CountryCode,
    pub gender: Option<Gender>,
    pub age: Option<AgeBucket>,
    /// Identifier of a school list; must not be the reserved word "any".
    pub school_set: Option<String>,
    pub seniority: Option<SeniorityRole>,
}

impl AudienceQuery {
    /// Canonical archive key: lowercase country, then one slot per
    /// dimension ("any" when unconstrained), then the ISO date, joined
    /// with '|'. Stable across runs, so archives can be diffed.
    pub fn canonical_key(&self, date: NaiveDate) -> String {
        [
            self.country.to_lowercase(),
            self.gender.map(|g| g.to_string()).unwrap_or_else(|| ANY.to_string()),
            self.age.map(|a| a.to_string()).unwrap_or_else(|| ANY.to_string()),
            self.school_set.clone().unwrap_or_else(|| ANY.to_string()),
            self.seniority.map(|r| r.to_string()).unwrap_or_else(|| ANY.to_string()),
            date.to_string(),
        ]
        .join("|")
    }
}

/// Archive of recorded true counts keyed by canonical query key.
#[derive(Debug, Clone, Default)]
pub struct ReplayArchive {
    entries: BTreeMap<String, u64>,
}

impl ReplayArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the true count for a query on a date, replacing any
    /// previous recording.
    pub fn record(&mut self, query: &AudienceQuery, date: NaiveDate, count: u64) {
        self.entries.insert(query.canonical_key(date), count);
    }

    /// Replays one query: the stored count, censored to zero when it is
    /// below the reporting threshold. Unknown keys are an error, never a
    /// silent zero.
    pub fn replay(&self, query: &AudienceQuery, date: NaiveDate) -> Result<u64, IngestError> {
        let key = query.canonical_key(date);
        match self.entries.get(&key) {
            Some(&count) if count >= CENSOR_THRESHOLD => Ok(count),
            Some(_) => Ok(0),
            None => Err(IngestError::MissingKey { key }),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
