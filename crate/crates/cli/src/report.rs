//! Report emission: every CSV and the run manifest. All writers sort
//! their rows (or receive pre-sorted data) and format floats with the
//! shortest round-tripping decimal, so identical data yields identical
//! bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use nowcast_core::analysis::{MedianRow, ShareRow, ValidationResult};
use nowcast_core::attribution::ShapReport;
use nowcast_core::datamodel::DropRecord;
use nowcast_core::stats::FitResult;
use nowcast_core::temporal::{DiffRecord, StabilitySummary};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Shortest decimal that parses back to exactly the same f64.
fn fmt(value: f64) -> String {
    format!("{value}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn write_row<W: std::io::Write, const N: usize>(
    path: &Path,
    w: &mut csv::Writer<W>,
    row: [String; N],
) -> Result<()> {
    w.write_record(&row).with_context(|| format!("writing {}", path.display()))
}

fn finish<W: std::io::Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| anyhow::anyhow!(e.to_string()))
        .and_then(|mut f| f.flush().map_err(Into::into))
        .with_context(|| format!("flushing {}", path.display()))
}

fn header<W: std::io::Write>(path: &Path, w: &mut csv::Writer<W>, cols: &[&str]) -> Result<()> {
    w.write_record(cols).with_context(|| format!("writing {}", path.display()))
}

/// `diffs.csv`: one row per (country, gender) series and window. The
/// gender cell is empty on whole-country rows; the pct cell is empty when
/// the older value was zero.
pub fn write_diffs(path: &Path, records: &[DiffRecord]) -> Result<()> {
    let mut sorted: Vec<&DiffRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.older_date, r.newer_date, r.gender, r.country));

    let mut w = writer(path)?;
    header(path, &mut w, &["country", "gender", "date_i", "date_j", "abs_diff", "pct_diff"])?;
    for r in sorted {
        write_row(
            path,
            &mut w,
            [
                r.country.to_string(),
                r.gender.map(|g| g.to_string()).unwrap_or_default(),
                r.older_date.to_string(),
                r.newer_date.to_string(),
                fmt(r.abs_diff),
                r.pct_diff.map(fmt).unwrap_or_default(),
            ],
        )?;
    }
    finish(path, w)
}

/// `stability.csv`: one boxplot row per (window, gender) group. Outliers
/// are packed as `CC:pct` pairs joined with `;`.
pub fn write_stability(path: &Path, summaries: &[StabilitySummary]) -> Result<()> {
    let mut w = writer(path)?;
    header(
        path,
        &mut w,
        &[
            "date_i",
            "date_j",
            "gender",
            "n",
            "q1",
            "median",
            "q3",
            "iqr",
            "whisker_low",
            "whisker_high",
            "outliers",
        ],
    )?;
    for s in summaries {
        let outliers = s
            .outliers
            .iter()
            .map(|o| format!("{}:{}", o.country, fmt(o.pct_diff)))
            .collect::<Vec<_>>()
            .join(";");
        write_row(
            path,
            &mut w,
            [
                s.older_date.to_string(),
                s.newer_date.to_string(),
                s.gender.map(|g| g.to_string()).unwrap_or_default(),
                s.n.to_string(),
                fmt(s.q1),
                fmt(s.median),
                fmt(s.q3),
                fmt(s.iqr),
                fmt(s.whisker_low),
                fmt(s.whisker_high),
                outliers,
            ],
        )?;
    }
    finish(path, w)
}

/// `drop_log.csv`: countries excluded on the way to the panel and why.
pub fn write_drop_log(path: &Path, drops: &[DropRecord]) -> Result<()> {
    let mut sorted: Vec<&DropRecord> = drops.iter().collect();
    sorted.sort_by_key(|d| d.country);

    let mut w = writer(path)?;
    header(path, &mut w, &["country", "reasons"])?;
    for d in sorted {
        write_row(path, &mut w, [d.country.to_string(), d.reasons.join(";")])?;
    }
    finish(path, w)
}

/// `fits.csv`: one row per (model, predictor) coefficient.
pub fn write_fits(path: &Path, fits: &[&FitResult]) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["model", "predictor", "coef", "se", "t", "p", "stars"])?;
    for fit in fits {
        for (i, predictor) in fit.spec.predictors.iter().enumerate() {
            write_row(
                path,
                &mut w,
                [
                    fit.spec.name.clone(),
                    predictor.label().to_string(),
                    fmt(fit.coefficients[i]),
                    fmt(fit.std_errors[i]),
                    fmt(fit.t_stats[i]),
                    fmt(fit.p_values[i]),
                    fit.stars[i].stars().to_string(),
                ],
            )?;
        }
    }
    finish(path, w)
}

/// `models.csv`: one summary row per fitted model.
pub fn write_models(path: &Path, fits: &[&FitResult]) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["model", "n", "r2", "r2_adj", "f", "f_p", "f_stars"])?;
    for fit in fits {
        write_row(
            path,
            &mut w,
            [
                fit.spec.name.clone(),
                fit.n.to_string(),
                fmt(fit.r2),
                fmt(fit.r2_adjusted),
                fmt(fit.f_stat),
                fmt(fit.f_p_value),
                fit.f_stars.stars().to_string(),
            ],
        )?;
    }
    finish(path, w)
}

/// `fit_errors.csv`: models that could not be fitted, with the error.
/// Written even when empty so the report inventory is stable.
pub fn write_fit_errors(path: &Path, failures: &[(String, String)]) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["model", "error"])?;
    for (model, error) in failures {
        write_row(path, &mut w, [model.clone(), error.clone()])?;
    }
    finish(path, w)
}

/// `shap_values.csv`: per-country, per-feature contributions. The
/// feature_value column carries the standardized value the contribution
/// was computed from.
pub fn write_shap_values(path: &Path, fit: &FitResult, report: &ShapReport) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["country", "feature", "phi", "feature_value"])?;
    for row in &report.rows {
        for (i, predictor) in fit.spec.predictors.iter().enumerate() {
            write_row(
                path,
                &mut w,
                [
                    row.country.to_string(),
                    predictor.label().to_string(),
                    fmt(row.contributions[i]),
                    fmt(row.features[i]),
                ],
            )?;
        }
    }
    finish(path, w)
}

/// `shap_summary.csv`: features by descending mean absolute contribution.
pub fn write_shap_summary(path: &Path, report: &ShapReport) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["feature", "mean_abs", "rank"])?;
    for imp in &report.importance {
        write_row(
            path,
            &mut w,
            [imp.predictor.label().to_string(), fmt(imp.mean_abs), imp.rank.to_string()],
        )?;
    }
    finish(path, w)
}

/// `validation_pairs.csv`: the joined (estimate, benchmark) table.
pub fn write_validation_pairs(path: &Path, result: &ValidationResult) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["country", "estimate", "benchmark"])?;
    for pair in &result.pairs {
        write_row(
            path,
            &mut w,
            [pair.country.to_string(), fmt(pair.estimate), fmt(pair.benchmark)],
        )?;
    }
    finish(path, w)
}

/// `validation_summary.csv`: a single `rho,p` row.
pub fn write_validation_summary(path: &Path, result: &ValidationResult) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["rho", "p"])?;
    write_row(path, &mut w, [fmt(result.correlation.rho), fmt(result.correlation.p_value)])?;
    finish(path, w)
}

/// `seniority_shares.csv`: long format, one row per (country, gender,
/// role) percentage; `empty` marks fully censored slices.
pub fn write_seniority_shares(path: &Path, shares: &[ShareRow]) -> Result<()> {
    let mut sorted: Vec<&ShareRow> = shares.iter().collect();
    sorted.sort_by_key(|s| (s.country, s.gender));

    let mut w = writer(path)?;
    header(path, &mut w, &["country", "gender", "role", "share", "empty"])?;
    for row in sorted {
        for (role, share) in &row.shares {
            write_row(
                path,
                &mut w,
                [
                    row.country.to_string(),
                    row.gender.to_string(),
                    role.to_string(),
                    fmt(*share),
                    row.empty.to_string(),
                ],
            )?;
        }
    }
    finish(path, w)
}

/// `seniority_medians.csv`: cross-country median share per (gender, role).
pub fn write_seniority_medians(path: &Path, medians: &[MedianRow]) -> Result<()> {
    let mut w = writer(path)?;
    header(path, &mut w, &["gender", "role", "median", "n"])?;
    for row in medians {
        write_row(
            path,
            &mut w,
            [row.gender.to_string(), row.role.to_string(), fmt(row.median), row.n.to_string()],
        )?;
    }
    finish(path, w)
}

/// Settings the run actually used, resolved from config and flags.
#[derive(Debug, Serialize)]
pub struct RunSettings {
    pub schema: Vec<String>,
    pub panel_snapshot: String,
    pub snapshot_dates: Vec<String>,
    pub include_zero_estimates: bool,
    pub log_linkedin: bool,
    pub shap_model: String,
}

/// `run_manifest.json`: inputs by digest, resolved settings, tool
/// version. The output directory's location is deliberately absent so
/// the same inputs produce the same manifest anywhere.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// RFC 3339 wall-clock time, or the literal "fixed" under
    /// `--fixed-clock`.
    pub created: String,
    pub config_digest: String,
    pub settings: RunSettings,
    /// Input path (as configured) to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).context("encoding manifest")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// SHA-256 of a file's bytes, streamed.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file =
        File::open(path).with_context(|| format!("digesting {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("digesting {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
