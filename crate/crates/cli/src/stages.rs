//! Pipeline stages shared by `run` and the single-step subcommands, plus
//! the `run` orchestration itself: ingest, scale, temporal, panel, fit,
//! attribution, validation, seniority, manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use nowcast_core::analysis::{seniority_medians, seniority_shares, validation_join};
use nowcast_core::attribution::shap_report;
use nowcast_core::datamodel::{
    assemble_panel, AssembleOptions, CountryCode, CountryIndicators, CountryPanel, DropRecord,
    Gender, SenioritySlice, Snapshot, MIN_PANEL_ROWS,
};
use nowcast_core::ingest::{
    filename_date, read_indicators_file, read_scaled_estimates, read_seniority_file,
    read_snapshot_file, write_panel_file, write_scaled_estimates,
};
use nowcast_core::scale::{country_totals, penetration, Breakdown, ScaledEstimate, Skip};
use nowcast_core::stats::{run_schema, FitResult, ModelSpec};
use nowcast_core::temporal::{diff, stability_summary, DiffRecord, StabilitySummary};
use thiserror::Error;

use crate::config::{self, LoadedConfig, PanelSnapshot};
use crate::report::{self, RunManifest, RunSettings};

/// Bad input or configuration; the process exits with code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct InputProblem(pub String);

/// Input that parsed fine but cannot be computed on; exit code 3.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct NumericalProblem(pub String);

pub fn input_error(message: impl Into<String>) -> anyhow::Error {
    InputProblem(message.into()).into()
}

pub fn numerical_error(message: impl Into<String>) -> anyhow::Error {
    NumericalProblem(message.into()).into()
}

// ===== Scale =====

/// One snapshot scaled at every grouping level: (gender, age) cells,
/// per-gender aggregates, and whole-country totals.
#[derive(Debug)]
pub struct ScaledSnapshot {
    pub date: NaiveDate,
    pub estimates: Vec<ScaledEstimate>,
    /// Cell countries that could not be scaled (no population figure or a
    /// zero platform total); their cells are excluded, not fatal.
    pub skipped: Vec<Skip>,
}

pub fn scale_snapshot(
    snapshot: &Snapshot,
    indicators: &[CountryIndicators],
) -> Result<ScaledSnapshot> {
    let populations: BTreeMap<CountryCode, u64> = indicators
        .iter()
        .filter_map(|ind| ind.wb_population.map(|p| (ind.country, p)))
        .collect();
    let result = penetration(&snapshot.platform_totals, &populations)?;

    let cell_countries: BTreeSet<CountryCode> =
        snapshot.cells.iter().map(|c| c.country).collect();
    let skipped: Vec<Skip> = result
        .skipped
        .into_iter()
        .filter(|skip| cell_countries.contains(&skip.country))
        .collect();

    let covered = Snapshot::new(
        snapshot.date,
        snapshot.cells.iter().filter(|c| result.table.contains(c.country)).cloned().collect(),
        snapshot.platform_totals.clone(),
    );
    let mut estimates = country_totals(&covered, &result.table, Breakdown::ByGenderAge)?;
    estimates.extend(country_totals(&covered, &result.table, Breakdown::ByGender)?);
    estimates.extend(country_totals(&covered, &result.table, Breakdown::Total)?);
    Ok(ScaledSnapshot { date: snapshot.date, estimates, skipped })
}

/// Whole-country scaled totals (the rows with both dimensions collapsed).
pub fn country_total_map(estimates: &[ScaledEstimate]) -> BTreeMap<CountryCode, f64> {
    estimates
        .iter()
        .filter(|e| e.gender.is_none() && e.age.is_none())
        .map(|e| (e.country, e.value))
        .collect()
}

// ===== Temporal =====

/// Reads scaled-estimate files whose names carry their snapshot date and
/// orders them chronologically.
pub fn load_scaled_series(paths: &[PathBuf]) -> Result<Vec<(NaiveDate, Vec<ScaledEstimate>)>> {
    let mut series = Vec::new();
    for path in paths {
        let date = filename_date(path).ok_or_else(|| {
            input_error(format!(
                "{}: file name carries no YYYY-MM-DD date to order snapshots by",
                path.display()
            ))
        })?;
        let estimates = read_scaled_estimates(path)?;
        series.push((date, estimates));
    }
    series.sort_by_key(|(date, _)| *date);
    for pair in series.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(input_error(format!("two scaled-estimate files share the date {}", pair[0].0)));
        }
    }
    Ok(series)
}

/// Differences of consecutive snapshots over the age-collapsed series
/// (per-gender aggregates and country totals). Series present on only one
/// side of a window are skipped and reported as notices.
pub fn diff_records(
    series: &[(NaiveDate, Vec<ScaledEstimate>)],
) -> Result<(Vec<DiffRecord>, Vec<String>)> {
    let mut records = Vec::new();
    let mut notices = Vec::new();
    for pair in series.windows(2) {
        let (older_date, newer_date) = (pair[0].0, pair[1].0);
        let index = |estimates: &'_ [ScaledEstimate]| -> BTreeMap<_, ScaledEstimate> {
            estimates
                .iter()
                .filter(|e| e.age.is_none())
                .map(|e| ((e.country, e.gender), *e))
                .collect()
        };
        let older = index(&pair[0].1);
        let newer = index(&pair[1].1);

        for (key, o) in &older {
            match newer.get(key) {
                Some(n) => records.push(diff(o, older_date, n, newer_date)?),
                None => notices.push(one_sided(key, older_date, newer_date, "older")),
            }
        }
        for key in newer.keys() {
            if !older.contains_key(key) {
                notices.push(one_sided(key, older_date, newer_date, "newer"));
            }
        }
    }
    Ok((records, notices))
}

fn one_sided(
    key: &(CountryCode, Option<Gender>),
    older: NaiveDate,
    newer: NaiveDate,
    side: &str,
) -> String {
    format!(
        "window {older}..{newer}: series {}/{} exists only in the {side} snapshot",
        key.0,
        key.1.map(|g| g.to_string()).unwrap_or_else(|| "any".to_string()),
    )
}

/// One boxplot summary per (window, gender) group with at least four
/// defined relative changes; smaller groups are skipped with a notice.
pub fn stability_rows(records: &[DiffRecord]) -> Result<Vec<StabilitySummary>> {
    let mut groups: BTreeMap<(NaiveDate, NaiveDate, Option<Gender>), Vec<DiffRecord>> =
        BTreeMap::new();
    for record in records {
        groups
            .entry((record.older_date, record.newer_date, record.gender))
            .or_default()
            .push(record.clone());
    }

    let mut summaries = Vec::new();
    for ((older, newer, gender), group) in groups {
        let usable = group.iter().filter(|r| r.pct_diff.is_some()).count();
        if usable < 4 {
            log::info!(
                "stability: window {older}..{newer} gender {} has {usable} usable changes, need 4; skipped",
                gender.map(|g| g.to_string()).unwrap_or_else(|| "any".to_string()),
            );
            continue;
        }
        summaries.push(stability_summary(&group)?);
    }
    Ok(summaries)
}

// ===== Panel =====

#[derive(Debug)]
pub struct PanelOutcome {
    pub panel: CountryPanel,
    pub drops: Vec<DropRecord>,
}

/// Joins scaled totals with indicators, records every exclusion, and
/// optionally replaces the audience column with its natural log (rows
/// with a zero estimate cannot survive that and are dropped).
pub fn build_panel(
    totals: &BTreeMap<CountryCode, f64>,
    indicators: &[CountryIndicators],
    snapshot_date: NaiveDate,
    include_zero_estimates: bool,
    log_linkedin: bool,
    skipped: &[Skip],
) -> Result<PanelOutcome> {
    let options =
        AssembleOptions { include_zero_estimates, snapshot_date: Some(snapshot_date) };
    let (mut panel, mut drops) = assemble_panel(totals, indicators, &options)?;
    for skip in skipped {
        drops.push(DropRecord {
            country: skip.country,
            reasons: vec![format!("cannot scale: {}", skip.reason)],
        });
    }

    if log_linkedin {
        let mut kept = Vec::with_capacity(panel.rows.len());
        for mut row in std::mem::take(&mut panel.rows) {
            if row.scaled_estimate > 0.0 {
                row.scaled_estimate = row.scaled_estimate.ln();
                kept.push(row);
            } else {
                drops.push(DropRecord {
                    country: row.country,
                    reasons: vec!["scaled estimate is zero; log transform undefined".into()],
                });
            }
        }
        if kept.len() < MIN_PANEL_ROWS {
            return Err(input_error(format!(
                "panel keeps {} rows after the log transform; at least {MIN_PANEL_ROWS} required",
                kept.len()
            )));
        }
        panel.rows = kept;
    }

    Ok(PanelOutcome { panel, drops })
}

// ===== Fit and attribution =====

#[derive(Debug)]
pub struct FitBatch {
    /// Successful fits in schema order.
    pub fits: Vec<FitResult>,
    /// (model name, error) for specs that could not be fitted.
    pub failures: Vec<(String, String)>,
}

/// Fits the whole schema; individual failures are collected, but a batch
/// where nothing fits is a numerical failure.
pub fn fit_schema(panel: &CountryPanel, specs: &[ModelSpec]) -> Result<FitBatch> {
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for outcome in run_schema(panel, specs) {
        match outcome.outcome {
            Ok(fit) => fits.push(fit),
            Err(err) => failures.push((outcome.spec.name, err.to_string())),
        }
    }
    if fits.is_empty() && !failures.is_empty() {
        let (model, error) = &failures[0];
        return Err(numerical_error(format!(
            "no model could be fitted; first failure: {model}: {error}"
        )));
    }
    Ok(FitBatch { fits, failures })
}

/// Picks the model to attribute: the requested name, or the successful
/// fit with the highest adjusted R² (ties keep schema order).
pub fn choose_shap_model<'a>(
    batch: &'a FitBatch,
    requested: Option<&str>,
) -> Result<&'a FitResult> {
    match requested {
        Some(name) => {
            if let Some(fit) = batch.fits.iter().find(|f| f.spec.name == name) {
                Ok(fit)
            } else if let Some((_, error)) =
                batch.failures.iter().find(|(model, _)| model == name)
            {
                Err(numerical_error(format!(
                    "attribution model {name:?} failed to fit: {error}"
                )))
            } else {
                Err(input_error(format!(
                    "attribution model {name:?} is not in the fitted schema"
                )))
            }
        }
        None => {
            let mut best: Option<&FitResult> = None;
            for fit in &batch.fits {
                if best.map_or(true, |b| fit.r2_adjusted > b.r2_adjusted) {
                    best = Some(fit);
                }
            }
            best.ok_or_else(|| numerical_error("no fitted model to attribute"))
        }
    }
}

// ===== Validation =====

/// Benchmark refugee counts per country, where the indicator file has one.
pub fn benchmark_map(indicators: &[CountryIndicators]) -> BTreeMap<CountryCode, f64> {
    indicators
        .iter()
        .filter_map(|ind| ind.unhcr_refugees.map(|r| (ind.country, r as f64)))
        .collect()
}

// ===== Run orchestration =====

#[derive(Debug)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub include_zero_estimates: Option<bool>,
    pub log_linkedin: bool,
    pub fixed_clock: bool,
}

/// Executes the full pipeline. Everything is written into a sibling
/// quarantine directory first and renamed into place only on success, so
/// the output directory either appears complete or not at all.
pub fn run_pipeline(options: &RunOptions) -> Result<PathBuf> {
    let loaded = config::load(&options.config)?;
    let specs = loaded.config.schema.resolve()?;
    let include_zero = options
        .include_zero_estimates
        .or(loaded.config.include_zero_estimates)
        .unwrap_or(true);
    let log_linkedin = options.log_linkedin || loaded.config.log_linkedin.unwrap_or(false);

    let out_dir = match &options.out {
        Some(path) => path.clone(),
        None => {
            let configured =
                loaded.config.out_dir.clone().unwrap_or_else(|| PathBuf::from("report"));
            config::resolve(&loaded.base_dir, &configured)
        }
    };
    ensure_fresh(&out_dir)?;

    let work = quarantine_dir(&out_dir)?;
    if work.exists() {
        fs::remove_dir_all(&work)
            .with_context(|| format!("clearing stale quarantine {}", work.display()))?;
    }
    fs::create_dir_all(&work)
        .with_context(|| format!("creating quarantine {}", work.display()))?;

    match execute(options, &loaded, &specs, include_zero, log_linkedin, &work) {
        Ok(()) => {
            if out_dir.exists() {
                fs::remove_dir(&out_dir)
                    .with_context(|| format!("replacing empty {}", out_dir.display()))?;
            }
            fs::rename(&work, &out_dir).with_context(|| {
                format!("moving {} into place as {}", work.display(), out_dir.display())
            })?;
            Ok(out_dir)
        }
        Err(err) => {
            log::warn!("run failed; partial outputs are in {}", work.display());
            Err(err)
        }
    }
}

/// Refuses to target an existing, non-empty output directory.
fn ensure_fresh(out: &Path) -> Result<()> {
    if !out.exists() {
        return Ok(());
    }
    if !out.is_dir() {
        return Err(input_error(format!(
            "output path {} exists and is not a directory",
            out.display()
        )));
    }
    let mut entries =
        fs::read_dir(out).with_context(|| format!("inspecting {}", out.display()))?;
    if entries.next().is_some() {
        return Err(input_error(format!(
            "output directory {} already exists and is not empty",
            out.display()
        )));
    }
    Ok(())
}

/// Sibling work directory: `<out>.quarantine`.
fn quarantine_dir(out: &Path) -> Result<PathBuf> {
    let name = out.file_name().ok_or_else(|| {
        input_error(format!("output path {} has no final directory name", out.display()))
    })?;
    let mut quarantined = name.to_os_string();
    quarantined.push(".quarantine");
    Ok(out.with_file_name(quarantined))
}

fn execute(
    options: &RunOptions,
    loaded: &LoadedConfig,
    specs: &[ModelSpec],
    include_zero: bool,
    log_linkedin: bool,
    work: &Path,
) -> Result<()> {
    let cfg = &loaded.config;

    // ingest
    let mut snapshots: Vec<(PathBuf, PathBuf, Snapshot)> = Vec::new();
    for configured in &cfg.snapshots {
        let path = config::resolve(&loaded.base_dir, configured);
        let snapshot = read_snapshot_file(&path).context("stage ingest")?;
        snapshots.push((configured.clone(), path, snapshot));
    }
    snapshots.sort_by_key(|(_, _, s)| s.date);
    for pair in snapshots.windows(2) {
        if pair[0].2.date == pair[1].2.date {
            return Err(input_error(format!(
                "stage ingest: {} and {} hold the same snapshot date {}",
                pair[0].1.display(),
                pair[1].1.display(),
                pair[0].2.date
            )));
        }
    }
    let indicators_path = config::resolve(&loaded.base_dir, &cfg.indicators);
    let indicators = read_indicators_file(&indicators_path).context("stage ingest")?;
    let seniority: Option<(PathBuf, Vec<SenioritySlice>)> = match &cfg.seniority {
        Some(configured) => {
            let path = config::resolve(&loaded.base_dir, configured);
            let slices = read_seniority_file(&path).context("stage ingest")?;
            Some((configured.clone(), slices))
        }
        None => None,
    };

    // scale
    let mut scaled: Vec<ScaledSnapshot> = Vec::new();
    for (_, path, snapshot) in &snapshots {
        let one = scale_snapshot(snapshot, &indicators)
            .with_context(|| format!("stage scale: {}", path.display()))?;
        for skip in &one.skipped {
            log::warn!("scale {}: {} skipped: {}", one.date, skip.country, skip.reason);
        }
        write_scaled_estimates(
            &one.estimates,
            &work.join(format!("scaled_estimates_{}.csv", one.date)),
        )
        .context("stage scale")?;
        scaled.push(one);
    }

    // temporal
    if scaled.len() >= 2 {
        let series: Vec<(NaiveDate, Vec<ScaledEstimate>)> =
            scaled.iter().map(|s| (s.date, s.estimates.clone())).collect();
        let (records, notices) = diff_records(&series).context("stage temporal")?;
        for notice in &notices {
            log::warn!("temporal: {notice}");
        }
        report::write_diffs(&work.join("diffs.csv"), &records)?;
        let summaries = stability_rows(&records).context("stage temporal")?;
        report::write_stability(&work.join("stability.csv"), &summaries)?;
    } else {
        log::info!("temporal stage skipped: need at least two snapshots, have one");
    }

    // panel
    let chosen = match cfg.panel_snapshot {
        PanelSnapshot::First => &scaled[0],
        PanelSnapshot::Last => scaled.last().expect("at least one snapshot"),
        PanelSnapshot::Date(date) => {
            scaled.iter().find(|s| s.date == date).ok_or_else(|| {
                input_error(format!(
                    "stage panel: panel_snapshot {date} matches none of the configured snapshots"
                ))
            })?
        }
    };
    let totals = country_total_map(&chosen.estimates);
    let outcome = build_panel(
        &totals,
        &indicators,
        chosen.date,
        include_zero,
        log_linkedin,
        &chosen.skipped,
    )
    .context("stage panel")?;
    report::write_drop_log(&work.join("drop_log.csv"), &outcome.drops)?;
    write_panel_file(&outcome.panel, &work.join("panel.csv")).context("stage panel")?;

    // fit
    let batch = fit_schema(&outcome.panel, specs).context("stage fit")?;
    for (model, error) in &batch.failures {
        log::warn!("fit: {model} failed: {error}");
    }
    let fit_refs: Vec<&FitResult> = batch.fits.iter().collect();
    report::write_fits(&work.join("fits.csv"), &fit_refs)?;
    report::write_models(&work.join("models.csv"), &fit_refs)?;
    report::write_fit_errors(&work.join("fit_errors.csv"), &batch.failures)?;

    // shap
    let attributed = choose_shap_model(&batch, cfg.shap_model.as_deref())
        .context("stage shap")?;
    let shap = shap_report(attributed, &outcome.panel).context("stage shap")?;
    report::write_shap_values(&work.join("shap_values.csv"), attributed, &shap)?;
    report::write_shap_summary(&work.join("shap_summary.csv"), &shap)?;

    // validate
    let benchmark = benchmark_map(&indicators);
    let validation = validation_join(&totals, &benchmark).context("stage validate")?;
    report::write_validation_pairs(&work.join("validation_pairs.csv"), &validation)?;
    report::write_validation_summary(&work.join("validation_summary.csv"), &validation)?;

    // seniority
    if let Some((_, slices)) = &seniority {
        let shares = seniority_shares(slices);
        report::write_seniority_shares(&work.join("seniority_shares.csv"), &shares)?;
        let medians = seniority_medians(&shares, false);
        report::write_seniority_medians(&work.join("seniority_medians.csv"), &medians)?;
    }

    // manifest
    let mut inputs = BTreeMap::new();
    for (configured, path, _) in &snapshots {
        inputs.insert(configured.display().to_string(), report::file_digest(path)?);
    }
    inputs.insert(cfg.indicators.display().to_string(), report::file_digest(&indicators_path)?);
    if let Some((configured, _)) = &seniority {
        let path = config::resolve(&loaded.base_dir, configured);
        inputs.insert(configured.display().to_string(), report::file_digest(&path)?);
    }

    let mut outputs = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(work)
        .with_context(|| format!("listing {}", work.display()))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .with_context(|| format!("listing {}", work.display()))?;
    entries.sort();
    for path in entries {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        outputs.insert(name, report::file_digest(&path)?);
    }

    let manifest = RunManifest {
        tool: "nowcast",
        version: env!("CARGO_PKG_VERSION"),
        created: if options.fixed_clock {
            "fixed".to_string()
        } else {
            chrono::Utc::now().to_rfc3339()
        },
        config_digest: loaded.digest.clone(),
        settings: RunSettings {
            schema: specs.iter().map(|s| s.name.clone()).collect(),
            panel_snapshot: cfg.panel_snapshot.to_string(),
            snapshot_dates: scaled.iter().map(|s| s.date.to_string()).collect(),
            include_zero_estimates: include_zero,
            log_linkedin,
            shap_model: attributed.spec.name.clone(),
        },
        inputs,
        outputs,
    };
    report::write_manifest(&work.join("run_manifest.json"), &manifest)
}
