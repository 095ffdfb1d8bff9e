//! Domain types shared by every stage of the pipeline, plus the two
//! structural operations that do not belong to a single stage:
//! snapshot validation and panel assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ad-audience counts below this are reported as zero by the platform.
/// A stored count is therefore either 0 (censored) or >= 300.
pub const CENSOR_THRESHOLD: u64 = 300;

/// Minimum number of joined rows a panel must keep to be usable downstream.
pub const MIN_PANEL_ROWS: usize = 3;

#[derive(Debug, Error)]
pub enum DataModelError {
    #[error("panel has {rows} rows after join and drops; at least {MIN_PANEL_ROWS} required")]
    PanelTooSmall { rows: usize },
}

/// Failure to parse one of the closed label sets (country, gender, age, role).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} label: {value:?}")]
pub struct ParseLabelError {
    pub kind: &'static str,
    pub value: String,
}

// ===== Keys and categorical labels =====

/// ISO-3166 alpha-2 country code, stored uppercase.
///
/// This is the join key across snapshots, indicators and report rows;
/// files using country names must be mapped before they reach the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn new(code: &str) -> Result<Self, ParseLabelError> {
        let bytes = code.as_bytes();
        if bytes.len() == 2 && bytes.iter().all(|b| b.is_ascii_alphabetic()) {
            Ok(CountryCode([
                bytes[0].to_ascii_uppercase(),
                bytes[1].to_ascii_uppercase(),
            ]))
        } else {
            Err(ParseLabelError { kind: "country", value: code.to_string() })
        }
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("country code is ASCII by construction")
    }

    /// Lowercase form used in canonical query keys.
    pub fn to_lowercase(&self) -> String {
        self.as_str().to_ascii_lowercase()
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CountryCode {
    type Err = ParseLabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountryCode::new(s)
    }
}

impl TryFrom<String> for CountryCode {
    type Error = ParseLabelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        CountryCode::new(&s)
    }
}

impl From<CountryCode> for String {
    fn from(c: CountryCode) -> String {
        c.as_str().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn label(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Gender {
    type Err = ParseLabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(ParseLabelError { kind: "gender", value: other.to_string() }),
        }
    }
}

/// Audience age bucket. `NoAge` is the platform's own "unclassified" bucket,
/// distinct from an aggregate over all buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBucket {
    A18To24,
    A25To34,
    A35To54,
    A55Plus,
    NoAge,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 5] = [
        AgeBucket::A18To24,
        AgeBucket::A25To34,
        AgeBucket::A35To54,
        AgeBucket::A55Plus,
        AgeBucket::NoAge,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AgeBucket::A18To24 => "18-24",
            AgeBucket::A25To34 => "25-34",
            AgeBucket::A35To54 => "35-54",
            AgeBucket::A55Plus => "55+",
            AgeBucket::NoAge => "noage",
        }
    }
}

impl fmt::Display for AgeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgeBucket {
    type Err = ParseLabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "18-24" => Ok(AgeBucket::A18To24),
            "25-34" => Ok(AgeBucket::A25To34),
            "35-54" => Ok(AgeBucket::A35To54),
            "55+" => Ok(AgeBucket::A55Plus),
            "noage" => Ok(AgeBucket::NoAge),
            other => Err(ParseLabelError { kind: "age", value: other.to_string() }),
        }
    }
}

/// Job-seniority ladder, ordered from unpaid to owner. The declaration
/// order is the canonical report order and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeniorityRole {
    Unpaid,
    Training,
    Entry,
    Senior,
    Manager,
    Director,
    Vp,
    Cxo,
    Partner,
    Owner,
}

impl SeniorityRole {
    pub const ALL: [SeniorityRole; 10] = [
        SeniorityRole::Unpaid,
        SeniorityRole::Training,
        SeniorityRole::Entry,
        SeniorityRole::Senior,
        SeniorityRole::Manager,
        SeniorityRole::Director,
        SeniorityRole::Vp,
        SeniorityRole::Cxo,
        SeniorityRole::Partner,
        SeniorityRole::Owner,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SeniorityRole::Unpaid => "unpaid",
            SeniorityRole::Training => "training",
            SeniorityRole::Entry => "entry",
            SeniorityRole::Senior => "senior",
            SeniorityRole::Manager => "manager",
            SeniorityRole::Director => "director",
            SeniorityRole::Vp => "vp",
            SeniorityRole::Cxo => "cxo",
            SeniorityRole::Partner => "partner",
            SeniorityRole::Owner => "owner",
        }
    }
}

impl fmt::Display for SeniorityRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SeniorityRole {
    type Err = ParseLabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unpaid" => Ok(SeniorityRole::Unpaid),
            "training" => Ok(SeniorityRole::Training),
            "entry" => Ok(SeniorityRole::Entry),
            "senior" => Ok(SeniorityRole::Senior),
            "manager" => Ok(SeniorityRole::Manager),
            "director" => Ok(SeniorityRole::Director),
            "vp" => Ok(SeniorityRole::Vp),
            "cxo" => Ok(SeniorityRole::Cxo),
            "partner" => Ok(SeniorityRole::Partner),
            "owner" => Ok(SeniorityRole::Owner),
            other => Err(ParseLabelError { kind: "role", value: other.to_string() }),
        }
    }
}

// ===== Observations =====

/// One censored audience count for a (country, gender, age) cell.
///
/// `censored` is true exactly when `count` is zero; a positive count is
/// always >= [`CENSOR_THRESHOLD`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudienceCell {
    pub snapshot_date: NaiveDate,
    pub country: CountryCode,
    pub gender: Gender,
    pub age: AgeBucket,
    pub count: u64,
    pub censored: bool,
}

/// All audience cells collected on one date, plus per-country platform
/// totals (location-only audience counts) used later as scaling divisors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub date: NaiveDate,
    pub cells: Vec<AudienceCell>,
    pub platform_totals: BTreeMap<CountryCode, u64>,
}

impl Snapshot {
    /// Builds a snapshot with cells in canonical (country, gender, age) order.
    pub fn new(
        date: NaiveDate,
        mut cells: Vec<AudienceCell>,
        platform_totals: BTreeMap<CountryCode, u64>,
    ) -> Self {
        cells.sort_by_key(|c| (c.country, c.gender, c.age));
        Snapshot { date, cells, platform_totals }
    }

    pub fn countries(&self) -> BTreeSet<CountryCode> {
        self.cells.iter().map(|c| c.country).collect()
    }
}

/// Country-level covariates; any field may be missing in the source file.
///
/// When present: `wb_population`, `gdp_usd`, `sci` and `distance_km` are
/// strictly positive, and `gpi` lies in [1, 5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryIndicators {
    pub country: CountryCode,
    pub wb_population: Option<u64>,
    pub gdp_usd: Option<f64>,
    pub gpi: Option<f64>,
    pub sci: Option<f64>,
    pub distance_km: Option<f64>,
    pub unhcr_refugees: Option<u64>,
    pub unhcr_as_of: Option<NaiveDate>,
}

/// One complete regression-ready row. All fields are required; rows with
/// gaps never make it into a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub country: CountryCode,
    pub scaled_estimate: f64,
    pub sci: f64,
    pub distance_km: f64,
    pub gpi: f64,
    pub gdp_usd: f64,
    pub unhcr_refugees: f64,
}

/// Where the panel's numbers came from: the snapshot date behind the
/// scaled estimates and the per-country benchmark vintages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanelProvenance {
    pub snapshot_date: Option<NaiveDate>,
    pub unhcr_vintages: BTreeMap<CountryCode, NaiveDate>,
}

/// Joined regression panel, rows in ascending country order.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryPanel {
    pub rows: Vec<PanelRow>,
    pub provenance: PanelProvenance,
}

/// Audience counts by seniority role for one (country, gender) pair.
/// Counts are zero-filled over all ten roles; a zero is a censored cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenioritySlice {
    pub date: Option<NaiveDate>,
    pub country: CountryCode,
    pub gender: Gender,
    pub counts: BTreeMap<SeniorityRole, u64>,
}

impl SenioritySlice {
    pub fn new(
        date: Option<NaiveDate>,
        country: CountryCode,
        gender: Gender,
        counts: BTreeMap<SeniorityRole, u64>,
    ) -> Self {
        let mut full = BTreeMap::new();
        for role in SeniorityRole::ALL {
            full.insert(role, counts.get(&role).copied().unwrap_or(0));
        }
        SenioritySlice { date, country, gender, counts: full }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn censored(&self, role: SeniorityRole) -> bool {
        self.counts.get(&role).copied().unwrap_or(0) == 0
    }
}

// ===== Snapshot validation =====

/// One broken rule, keyed by the offending cell or country.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.rule)
    }
}

/// Checks censoring, flag consistency, key uniqueness and coverage rules.
/// Returns every violation found; an empty vector means the snapshot is valid.
pub fn validate_snapshot(snapshot: &Snapshot) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();

    for cell in &snapshot.cells {
        let key = format!("{}/{}/{}", cell.country, cell.gender, cell.age);

        if cell.count > 0 && cell.count < CENSOR_THRESHOLD {
            violations.push(Violation {
                key: key.clone(),
                rule: format!("count in (0,{CENSOR_THRESHOLD})"),
            });
        }
        if cell.censored != (cell.count == 0) {
            violations.push(Violation { key: key.clone(), rule: "censored flag mismatch".into() });
        }
        if cell.snapshot_date != snapshot.date {
            violations.push(Violation {
                key: key.clone(),
                rule: format!("cell date {} differs from snapshot date {}", cell.snapshot_date, snapshot.date),
            });
        }
        if !seen.insert((cell.country, cell.gender, cell.age)) {
            violations.push(Violation { key: key.clone(), rule: "duplicate cell key".into() });
        }
        if !snapshot.platform_totals.contains_key(&cell.country) {
            violations.push(Violation { key, rule: "country missing from platform_totals".into() });
        }
    }

    violations
}

// ===== Panel assembly =====

/// Why a joined country was left out of the panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropRecord {
    pub country: CountryCode,
    /// Names of the missing fields, or the exclusion reason for zero estimates.
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AssembleOptions {
    /// Keep countries whose scaled estimate is zero (fully censored audience).
    pub include_zero_estimates: bool,
    pub snapshot_date: Option<NaiveDate>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { include_zero_estimates: true, snapshot_date: None }
    }
}

/// Inner-joins scaled country totals with indicators into a regression panel.
///
/// Countries in the key intersection that miss any required field are dropped
/// and reported; the sum of kept and dropped rows equals the intersection
/// size. Rows come out in ascending country order. Fails if fewer than
/// [`MIN_PANEL_ROWS`] rows survive.
pub fn assemble_panel(
    scaled_totals: &BTreeMap<CountryCode, f64>,
    indicators: &[CountryIndicators],
    options: &AssembleOptions,
) -> Result<(CountryPanel, Vec<DropRecord>), DataModelError> {
    let by_country: BTreeMap<CountryCode, &CountryIndicators> =
        indicators.iter().map(|ind| (ind.country, ind)).collect();

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut vintages = BTreeMap::new();

    for (&country, &estimate) in scaled_totals {
        let Some(ind) = by_country.get(&country) else { continue };

        if !options.include_zero_estimates && estimate == 0.0 {
            dropped.push(DropRecord {
                country,
                reasons: vec!["scaled_estimate is zero (excluded by option)".into()],
            });
            continue;
        }

        let mut missing = Vec::new();
        if ind.sci.is_none() {
            missing.push("sci".to_string());
        }
        if ind.distance_km.is_none() {
            missing.push("distance_km".to_string());
        }
        if ind.gpi.is_none() {
            missing.push("gpi".to_string());
        }
        if ind.gdp_usd.is_none() {
            missing.push("gdp_usd".to_string());
        }
        if ind.unhcr_refugees.is_none() {
            missing.push("unhcr_refugees".to_string());
        }

        if !missing.is_empty() {
            dropped.push(DropRecord { country, reasons: missing });
            continue;
        }

        rows.push(PanelRow {
            country,
            scaled_estimate: estimate,
            sci: ind.sci.unwrap(),
            distance_km: ind.distance_km.unwrap(),
            gpi: ind.gpi.unwrap(),
            gdp_usd: ind.gdp_usd.unwrap(),
            unhcr_refugees: ind.unhcr_refugees.unwrap() as f64,
        });
        if let Some(as_of) = ind.unhcr_as_of {
            vintages.insert(country, as_of);
        }
    }

    if rows.len() < MIN_PANEL_ROWS {
        return Err(DataModelError::PanelTooSmall { rows: rows.len() });
    }

    let panel = CountryPanel {
        rows,
        provenance: PanelProvenance {
            snapshot_date: options.snapshot_date,
            unhcr_vintages: vintages,
        },
    };
    Ok((panel, dropped))
}
