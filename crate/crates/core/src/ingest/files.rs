//! CSV readers and writers for the five on-disk table formats.
//!
//! Headers are matched exactly and in order. Readers report the first
//! offending row with its 1-based line number; writers emit rows in a
//! stable sort order and format floats with the shortest representation
//! that round-trips, so written files parse back to identical values.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use super::IngestError;
use crate::datamodel::{
    validate_snapshot, AgeBucket, AudienceCell, CountryCode, CountryIndicators, CountryPanel,
    Gender, PanelProvenance, PanelRow, SenioritySlice, SeniorityRole, Snapshot, CENSOR_THRESHOLD,
};
use crate::scale::ScaledEstimate;

pub const SNAPSHOT_HEADERS: [&str; 6] = ["date", "country", "gender", "age", "count", "query"];
pub const INDICATOR_HEADERS: [&str; 8] = [
    "country",
    "wb_population",
    "gdp_usd",
    "gpi",
    "sci",
    "distance_km",
    "unhcr_refugees",
    "unhcr_as_of",
];
pub const SENIORITY_HEADERS: [&str; 5] = ["date", "country", "gender", "role", "count"];
pub const SCALED_HEADERS: [&str; 5] = ["country", "gender", "age", "value", "censored"];
pub const PANEL_HEADERS: [&str; 7] = [
    "country",
    "scaled_estimate",
    "sci",
    "distance_km",
    "gpi",
    "gdp_usd",
    "unhcr_refugees",
];

/// Rows whose audience is the whole platform population of the country.
const QUERY_PLATFORM_TOTAL: &str = "platform_total";
/// Rows whose audience is the educated subset broken out by gender and age.
const QUERY_EDUCATED: &str = "educated";
/// Placeholder label for a dimension a row does not break out.
const ANY: &str = "any";

// ===== shared plumbing =====

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, message: impl Into<String>) -> IngestError {
    IngestError::Malformed { path: path.to_path_buf(), message: message.into() }
}

fn row_err(path: &Path, line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Row { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads the whole file, checks the exact header sequence, and pairs each
/// record with its 1-based line number.
fn read_rows(
    path: &Path,
    expected_headers: &[&str],
) -> Result<Vec<(u64, StringRecord)>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = ReaderBuilder::new().has_headers(true).trim(Trim::All).from_reader(file);

    let headers = reader.headers().map_err(|e| malformed(path, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected_headers {
        return Err(malformed(
            path,
            format!("expected headers {:?}, got {:?}", expected_headers.join(","), got.join(",")),
        ));
    }

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| malformed(path, e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        records.push((line, record));
    }
    Ok(records)
}

fn parse_date(path: &Path, line: u64, column: &str, raw: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|_| row_err(path, line, format!("column {column}: invalid date {raw:?}")))
}

fn parse_u64(path: &Path, line: u64, column: &str, raw: &str) -> Result<u64, IngestError> {
    raw.parse::<u64>().map_err(|_| {
        row_err(path, line, format!("column {column}: invalid non-negative integer {raw:?}"))
    })
}

fn parse_f64(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64, IngestError> {
    let value = raw
        .parse::<f64>()
        .map_err(|_| row_err(path, line, format!("column {column}: invalid number {raw:?}")))?;
    if !value.is_finite() {
        return Err(row_err(path, line, format!("column {column}: non-finite number {raw:?}")));
    }
    Ok(value)
}

fn parse_label<T>(path: &Path, line: u64, raw: &str) -> Result<T, IngestError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| row_err(path, line, e.to_string()))
}

fn parse_bool(path: &Path, line: u64, column: &str, raw: &str) -> Result<bool, IngestError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        other => {
            Err(row_err(path, line, format!("column {column}: expected true/false, got {other:?}")))
        }
    }
}

fn new_writer(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(WriterBuilder::new().from_writer(file))
}

fn finish_writer(path: &Path, mut writer: csv::Writer<File>) -> Result<(), IngestError> {
    writer.flush().map_err(|e| io_err(path, e))
}

fn write_record<const N: usize>(
    path: &Path,
    writer: &mut csv::Writer<File>,
    fields: [String; N],
) -> Result<(), IngestError> {
    writer.write_record(fields).map_err(|e| malformed(path, e.to_string()))
}

/// Shortest decimal representation that parses back to the same f64.
fn fmt_f64(value: f64) -> String {
    format!("{value}")
}

/// First ISO date (YYYY-MM-DD) embedded in the file stem, if any.
/// Snapshot and scaled-estimate files carry their date this way.
pub fn filename_date(path: &Path) -> Option<NaiveDate> {
    let stem = path.file_stem()?.to_str()?;
    (0..stem.len().saturating_sub(9)).find_map(|start| {
        stem.get(start..start + 10)
            .and_then(|window| NaiveDate::parse_from_str(window, "%Y-%m-%d").ok())
    })
}

// ===== snapshots =====

/// Reads one snapshot file. All rows must share one date; if the filename
/// embeds a date it must agree. `platform_total` rows become the scaling
/// divisors, `educated` rows the audience cells. The parsed snapshot is
/// validated before it is returned.
pub fn read_snapshot_file(path: &Path) -> Result<Snapshot, IngestError> {
    let rows = read_rows(path, &SNAPSHOT_HEADERS)?;
    if rows.is_empty() {
        return Err(malformed(path, "no data rows"));
    }

    let mut date: Option<NaiveDate> = None;
    let mut cells = Vec::new();
    let mut platform_totals = BTreeMap::new();

    for (line, record) in &rows {
        let line = *line;
        let row_date = parse_date(path, line, "date", &record[0])?;
        match date {
            None => date = Some(row_date),
            Some(expected) if expected != row_date => {
                return Err(row_err(
                    path,
                    line,
                    format!("date {row_date} differs from the file's first date {expected}"),
                ));
            }
            Some(_) => {}
        }

        let country: CountryCode = parse_label(path, line, &record[1])?;
        let count = parse_u64(path, line, "count", &record[4])?;
        match &record[5] {
            QUERY_PLATFORM_TOTAL => {
                if &record[2] != ANY || &record[3] != ANY {
                    return Err(row_err(
                        path,
                        line,
                        format!("{QUERY_PLATFORM_TOTAL} rows must use gender={ANY} and age={ANY}"),
                    ));
                }
                if platform_totals.insert(country, count).is_some() {
                    return Err(row_err(
                        path,
                        line,
                        format!("duplicate {QUERY_PLATFORM_TOTAL} row for {country}"),
                    ));
                }
            }
            QUERY_EDUCATED => {
                let gender: Gender = parse_label(path, line, &record[2])?;
                let age: AgeBucket = parse_label(path, line, &record[3])?;
                cells.push(AudienceCell {
                    snapshot_date: row_date,
                    country,
                    gender,
                    age,
                    count,
                    censored: count == 0,
                });
            }
            other => {
                return Err(row_err(path, line, format!("column query: unknown kind {other:?}")));
            }
        }
    }

    let date = date.expect("at least one data row");
    if let Some(stem_date) = filename_date(path) {
        if stem_date != date {
            return Err(malformed(
                path,
                format!("filename says {stem_date} but the rows say {date}"),
            ));
        }
    }

    let snapshot = Snapshot::new(date, cells, platform_totals);
    let violations = validate_snapshot(&snapshot);
    if !violations.is_empty() {
        return Err(IngestError::InvalidSnapshot { path: path.to_path_buf(), violations });
    }
    Ok(snapshot)
}

/// Writes a snapshot: platform totals first (ascending country), then the
/// audience cells in their canonical (country, gender, age) order.
pub fn write_snapshot_file(snapshot: &Snapshot, path: &Path) -> Result<(), IngestError> {
    let mut writer = new_writer(path)?;
    write_record(path, &mut writer, SNAPSHOT_HEADERS.map(String::from))?;

    let date = snapshot.date.to_string();
    for (country, total) in &snapshot.platform_totals {
        write_record(
            path,
            &mut writer,
            [
                date.clone(),
                country.to_string(),
                ANY.to_string(),
                ANY.to_string(),
                total.to_string(),
                QUERY_PLATFORM_TOTAL.to_string(),
            ],
        )?;
    }

    let mut cells: Vec<&AudienceCell> = snapshot.cells.iter().collect();
    cells.sort_by_key(|c| (c.country, c.gender, c.age));
    for cell in cells {
        write_record(
            path,
            &mut writer,
            [
                date.clone(),
                cell.country.to_string(),
                cell.gender.to_string(),
                cell.age.to_string(),
                cell.count.to_string(),
                QUERY_EDUCATED.to_string(),
            ],
        )?;
    }
    finish_writer(path, writer)
}

// ===== indicators =====

fn optional(raw: &str) -> Option<&str> {
    if raw.is_empty() {
        None
    } else {
        Some(raw)
    }
}

/// Reads country indicators. Empty cells become missing values; present
/// values are range-checked (populations, GDP, SCI and distance strictly
/// positive, GPI within [1, 5]).
pub fn read_indicators_file(path: &Path) -> Result<Vec<CountryIndicators>, IngestError> {
    let rows = read_rows(path, &INDICATOR_HEADERS)?;
    let mut seen: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());

    for (line, record) in &rows {
        let line = *line;
        let country: CountryCode = parse_label(path, line, &record[0])?;
        if let Some(first) = seen.insert(country, line) {
            return Err(row_err(
                path,
                line,
                format!("duplicate row for {country} (first on line {first})"),
            ));
        }

        let wb_population = optional(&record[1])
            .map(|raw| parse_u64(path, line, "wb_population", raw))
            .transpose()?;
        if wb_population == Some(0) {
            return Err(row_err(path, line, "column wb_population: must be positive"));
        }
        let gdp_usd =
            optional(&record[2]).map(|raw| parse_f64(path, line, "gdp_usd", raw)).transpose()?;
        if matches!(gdp_usd, Some(v) if v <= 0.0) {
            return Err(row_err(path, line, "column gdp_usd: must be positive"));
        }
        let gpi = optional(&record[3]).map(|raw| parse_f64(path, line, "gpi", raw)).transpose()?;
        if matches!(gpi, Some(v) if !(1.0..=5.0).contains(&v)) {
            return Err(row_err(path, line, "column gpi: must lie in [1, 5]"));
        }
        let sci = optional(&record[4]).map(|raw| parse_f64(path, line, "sci", raw)).transpose()?;
        if matches!(sci, Some(v) if v <= 0.0) {
            return Err(row_err(path, line, "column sci: must be positive"));
        }
        let distance_km = optional(&record[5])
            .map(|raw| parse_f64(path, line, "distance_km", raw))
            .transpose()?;
        if matches!(distance_km, Some(v) if v <= 0.0) {
            return Err(row_err(path, line, "column distance_km: must be positive"));
        }
        let unhcr_refugees = optional(&record[6])
            .map(|raw| parse_u64(path, line, "unhcr_refugees", raw))
            .transpose()?;
        let unhcr_as_of = optional(&record[7])
            .map(|raw| parse_date(path, line, "unhcr_as_of", raw))
            .transpose()?;

        out.push(CountryIndicators {
            country,
            wb_population,
            gdp_usd,
            gpi,
            sci,
            distance_km,
            unhcr_refugees,
            unhcr_as_of,
        });
    }
    Ok(out)
}

/// Writes indicators in the given row order; missing values become empty
/// cells.
pub fn write_indicators_file(
    indicators: &[CountryIndicators],
    path: &Path,
) -> Result<(), IngestError> {
    let mut writer = new_writer(path)?;
    write_record(path, &mut writer, INDICATOR_HEADERS.map(String::from))?;
    for ind in indicators {
        write_record(
            path,
            &mut writer,
            [
                ind.country.to_string(),
                ind.wb_population.map(|v| v.to_string()).unwrap_or_default(),
                ind.gdp_usd.map(fmt_f64).unwrap_or_default(),
                ind.gpi.map(fmt_f64).unwrap_or_default(),
                ind.sci.map(fmt_f64).unwrap_or_default(),
                ind.distance_km.map(fmt_f64).unwrap_or_default(),
                ind.unhcr_refugees.map(|v| v.to_string()).unwrap_or_default(),
                ind.unhcr_as_of.map(|d| d.to_string()).unwrap_or_default(),
            ],
        )?;
    }
    finish_writer(path, writer)
}

// ===== seniority =====

/// Reads seniority counts into zero-filled per-(country, gender) slices,
/// ascending by country then gender. All rows must share one date, and
/// counts follow the same censoring rule as audience cells (zero or at
/// least the reporting threshold).
pub fn read_seniority_file(path: &Path) -> Result<Vec<SenioritySlice>, IngestError> {
    let rows = read_rows(path, &SENIORITY_HEADERS)?;
    if rows.is_empty() {
        return Err(malformed(path, "no data rows"));
    }

    let mut date: Option<NaiveDate> = None;
    let mut groups: BTreeMap<(CountryCode, Gender), BTreeMap<SeniorityRole, u64>> =
        BTreeMap::new();

    for (line, record) in &rows {
        let line = *line;
        let row_date = parse_date(path, line, "date", &record[0])?;
        match date {
            None => date = Some(row_date),
            Some(expected) if expected != row_date => {
                return Err(row_err(
                    path,
                    line,
                    format!("date {row_date} differs from the file's first date {expected}"),
                ));
            }
            Some(_) => {}
        }
        let country: CountryCode = parse_label(path, line, &record[1])?;
        let gender: Gender = parse_label(path, line, &record[2])?;
        let role: SeniorityRole = parse_label(path, line, &record[3])?;
        let count = parse_u64(path, line, "count", &record[4])?;
        if count > 0 && count < CENSOR_THRESHOLD {
            return Err(row_err(
                path,
                line,
                format!("column count: {count} is positive but below the reporting threshold {CENSOR_THRESHOLD}"),
            ));
        }
        if groups.entry((country, gender)).or_default().insert(role, count).is_some() {
            return Err(row_err(path, line, format!("duplicate row for {country}/{gender}/{role}")));
        }
    }

    Ok(groups
        .into_iter()
        .map(|((country, gender), counts)| SenioritySlice::new(date, country, gender, counts))
        .collect())
}

// ===== scaled estimates =====

/// Writes scaled estimates sorted by country, then gender (aggregate rows
/// first), then age. Collapsed dimensions are empty cells.
pub fn write_scaled_estimates(
    estimates: &[ScaledEstimate],
    path: &Path,
) -> Result<(), IngestError> {
    let mut sorted: Vec<&ScaledEstimate> = estimates.iter().collect();
    sorted.sort_by_key(|e| (e.country, e.gender, e.age));

    let mut writer = new_writer(path)?;
    write_record(path, &mut writer, SCALED_HEADERS.map(String::from))?;
    for est in sorted {
        write_record(
            path,
            &mut writer,
            [
                est.country.to_string(),
                est.gender.map(|g| g.to_string()).unwrap_or_default(),
                est.age.map(|a| a.to_string()).unwrap_or_default(),
                fmt_f64(est.value),
                est.censored.to_string(),
            ],
        )?;
    }
    finish_writer(path, writer)
}

/// Reads scaled estimates back; empty gender/age cells mean the dimension
/// was collapsed. The censored flag must agree with a zero value.
pub fn read_scaled_estimates(path: &Path) -> Result<Vec<ScaledEstimate>, IngestError> {
    let rows = read_rows(path, &SCALED_HEADERS)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, record) in &rows {
        let line = *line;
        let country: CountryCode = parse_label(path, line, &record[0])?;
        let gender: Option<Gender> =
            optional(&record[1]).map(|raw| parse_label(path, line, raw)).transpose()?;
        let age: Option<AgeBucket> =
            optional(&record[2]).map(|raw| parse_label(path, line, raw)).transpose()?;
        let value = parse_f64(path, line, "value", &record[3])?;
        if value < 0.0 {
            return Err(row_err(path, line, "column value: must be non-negative"));
        }
        let censored = parse_bool(path, line, "censored", &record[4])?;
        if censored != (value == 0.0) {
            return Err(row_err(
                path,
                line,
                "censored flag must be true exactly for zero values",
            ));
        }
        out.push(ScaledEstimate { country, gender, age, value, censored });
    }
    Ok(out)
}

// ===== panels =====

/// Writes a regression panel, rows in their (already ascending) order.
pub fn write_panel_file(panel: &CountryPanel, path: &Path) -> Result<(), IngestError> {
    let mut writer = new_writer(path)?;
    write_record(path, &mut writer, PANEL_HEADERS.map(String::from))?;
    for row in &panel.rows {
        write_record(
            path,
            &mut writer,
            [
                row.country.to_string(),
                fmt_f64(row.scaled_estimate),
                fmt_f64(row.sci),
                fmt_f64(row.distance_km),
                fmt_f64(row.gpi),
                fmt_f64(row.gdp_usd),
                fmt_f64(row.unhcr_refugees),
            ],
        )?;
    }
    finish_writer(path, writer)
}

/// Reads a panel file; rows are sorted by country and duplicates rejected.
/// Provenance is not stored in the file and comes back empty.
pub fn read_panel_file(path: &Path) -> Result<CountryPanel, IngestError> {
    let rows = read_rows(path, &PANEL_HEADERS)?;
    let mut seen: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, record) in &rows {
        let line = *line;
        let country: CountryCode = parse_label(path, line, &record[0])?;
        if let Some(first) = seen.insert(country, line) {
            return Err(row_err(
                path,
                line,
                format!("duplicate row for {country} (first on line {first})"),
            ));
        }
        out.push(PanelRow {
            country,
            scaled_estimate: parse_f64(path, line, "scaled_estimate", &record[1])?,
            sci: parse_f64(path, line, "sci", &record[2])?,
            distance_km: parse_f64(path, line, "distance_km", &record[3])?,
            gpi: parse_f64(path, line, "gpi", &record[4])?,
            gdp_usd: parse_f64(path, line, "gdp_usd", &record[5])?,
            unhcr_refugees: parse_f64(path, line, "unhcr_refugees", &record[6])?,
        });
    }
    out.sort_by_key(|r| r.country);
    Ok(CountryPanel { rows: out, provenance: PanelProvenance::default() })
}
