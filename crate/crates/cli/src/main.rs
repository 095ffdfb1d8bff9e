//! Command-line pipeline from censored ad-audience snapshots to scaled
//! population estimates, stability summaries, regression fits, feature
//! attributions and benchmark validation.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 numerical
//! failure (rank deficiency, zero variance), 4 broken internal invariant.

mod config;
mod report;
mod stages;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use nowcast_core::analysis::{
    seniority_medians, seniority_shares, validation_join, AnalysisError,
};
use nowcast_core::attribution::{shap_report, AttributionError};
use nowcast_core::datamodel::DataModelError;
use nowcast_core::ingest::{
    generate, read_indicators_file, read_seniority_file, read_snapshot_file, write_bundle,
    IngestError, SyntheticConfig,
};
use nowcast_core::ingest::{read_panel_file, write_scaled_estimates};
use nowcast_core::scale::ScaleError;
use nowcast_core::stats::{ols_fit, FitResult, ModelSpec, StatsError};
use nowcast_core::temporal::TemporalError;

use crate::config::SchemaSelection;
use crate::stages::{input_error, InputProblem, NumericalProblem};

#[derive(Parser)]
#[command(
    name = "nowcast",
    version,
    about = "Scales censored audience snapshots to population estimates and models them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read input files, enforce their invariants, and summarize them.
    Ingest {
        /// Snapshot CSVs to check; repeatable.
        #[arg(long = "snapshot")]
        snapshots: Vec<PathBuf>,
        /// Country indicator CSV to check.
        #[arg(long)]
        indicators: Option<PathBuf>,
        /// Seniority CSV to check.
        #[arg(long)]
        seniority: Option<PathBuf>,
    },
    /// Scale one snapshot's counts by platform penetration.
    Scale {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        indicators: PathBuf,
        /// Output CSV; defaults to scaled_estimates_<date>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two or more scaled-estimate files across their dates.
    Diff {
        /// Scaled-estimate CSVs whose names carry the snapshot date.
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        /// Directory receiving diffs.csv and stability.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit the regression schema on a panel file.
    Fit {
        #[arg(long)]
        panel: PathBuf,
        /// Comma-separated model names; defaults to the whole schema.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Directory receiving fits.csv, models.csv and fit_errors.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-country feature contributions for one fitted model.
    Shap {
        #[arg(long)]
        panel: PathBuf,
        /// Model name; defaults to the best fit by adjusted R².
        #[arg(long)]
        model: Option<String>,
        /// Directory receiving shap_values.csv and shap_summary.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rank-correlate scaled country totals against the benchmark counts.
    Validate {
        /// Scaled-estimate CSV holding whole-country rows.
        #[arg(long)]
        scaled: PathBuf,
        /// Indicator CSV providing the benchmark column.
        #[arg(long)]
        indicators: PathBuf,
        /// Directory receiving validation_pairs.csv and validation_summary.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Seniority share distributions and their cross-country medians.
    Seniority {
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving seniority_shares.csv and seniority_medians.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Keep fully censored slices in the medians.
        #[arg(long)]
        include_empty: bool,
    },
    /// Generate a synthetic input bundle with known planted coefficients.
    Simulate {
        /// Directory receiving the bundle and a ready-to-run config.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 38)]
        countries: usize,
        /// Planted standardized coefficients, audience column first.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.2, -0.15, -0.1])]
        beta: Vec<f64>,
        /// Gaussian noise scale on the standardized response.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Censor sub-threshold cells to zero like the platform does.
        #[arg(long)]
        censoring: bool,
        #[arg(long, default_value_t = 2)]
        snapshots: usize,
        #[arg(long, default_value = "2023-02-27")]
        base_date: NaiveDate,
        /// Smallest per-country audience total in the first snapshot.
        #[arg(long, default_value_t = 2_000)]
        count_min: u64,
        /// Largest per-country audience total in the first snapshot.
        #[arg(long, default_value_t = 3_000_000)]
        count_max: u64,
    },
    /// Execute the full pipeline described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep countries whose whole audience is censored to zero.
        #[arg(long, value_name = "BOOL")]
        include_zero_estimates: Option<bool>,
        /// Fit against the natural log of the scaled audience column.
        #[arg(long)]
        log_linkedin: bool,
        /// Stamp the manifest with a fixed marker instead of wall-clock
        /// time, making reruns byte-identical.
        #[arg(long)]
        fixed_clock: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Maps an error chain onto the documented exit codes. The first typed
/// error in the chain decides.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputProblem>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<NumericalProblem>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<IngestError>().is_some()
            || cause.downcast_ref::<DataModelError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<csv::Error>().is_some()
        {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<StatsError>() {
            return stats_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ScaleError>() {
            return match e {
                ScaleError::ZeroPopulation { .. } => 2,
                // the pipeline only scales covered countries, so a missing
                // entry here means the harness itself broke
                ScaleError::MissingCountry { .. } => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<AttributionError>() {
            return match e {
                AttributionError::TooManyFeatures { .. } => 2,
                AttributionError::FeatureCount { .. } => 4,
                AttributionError::Stats(inner) => stats_code(inner),
            };
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return match e {
                AnalysisError::InsufficientOverlap { .. } => 2,
                AnalysisError::Stats(inner) => stats_code(inner),
            };
        }
        if cause.downcast_ref::<TemporalError>().is_some() {
            return 4;
        }
    }
    4
}

fn stats_code(err: &StatsError) -> u8 {
    match err {
        StatsError::ZeroVariance
        | StatsError::NonFinite { .. }
        | StatsError::RankDeficient
        | StatsError::DegreesOfFreedom { .. } => 3,
        StatsError::Column { source, .. } => stats_code(source),
        _ => 2,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { snapshots, indicators, seniority } => {
            cmd_ingest(&snapshots, indicators.as_deref(), seniority.as_deref())
        }
        Command::Scale { snapshot, indicators, out } => {
            cmd_scale(&snapshot, &indicators, out.as_deref())
        }
        Command::Diff { files, out } => cmd_diff(&files, &out),
        Command::Fit { panel, models, out } => cmd_fit(&panel, models, &out),
        Command::Shap { panel, model, out } => cmd_shap(&panel, model.as_deref(), &out),
        Command::Validate { scaled, indicators, out } => {
            cmd_validate(&scaled, &indicators, &out)
        }
        Command::Seniority { input, out, include_empty } => {
            cmd_seniority(&input, &out, include_empty)
        }
        Command::Simulate {
            out,
            seed,
            countries,
            beta,
            noise,
            censoring,
            snapshots,
            base_date,
            count_min,
            count_max,
        } => {
            let config = SyntheticConfig {
                seed,
                n_countries: countries,
                beta,
                noise_scale: noise,
                censoring,
                n_snapshots: snapshots,
                base_date,
                count_range: (count_min, count_max),
            };
            cmd_simulate(&out, &config)
        }
        Command::Run { config, out, include_zero_estimates, log_linkedin, fixed_clock } => {
            let out_dir = stages::run_pipeline(&stages::RunOptions {
                config,
                out,
                include_zero_estimates,
                log_linkedin,
                fixed_clock,
            })?;
            println!("report written to {}", out_dir.display());
            Ok(())
        }
    }
}

fn cmd_ingest(
    snapshots: &[PathBuf],
    indicators: Option<&Path>,
    seniority: Option<&Path>,
) -> Result<()> {
    if snapshots.is_empty() && indicators.is_none() && seniority.is_none() {
        return Err(input_error(
            "nothing to ingest: pass --snapshot, --indicators or --seniority",
        ));
    }
    for path in snapshots {
        let snapshot = read_snapshot_file(path)?;
        println!(
            "snapshot {}: {} countries, {} cells, {} platform totals",
            snapshot.date,
            snapshot.countries().len(),
            snapshot.cells.len(),
            snapshot.platform_totals.len()
        );
    }
    if let Some(path) = indicators {
        let indicators = read_indicators_file(path)?;
        let with_population =
            indicators.iter().filter(|i| i.wb_population.is_some()).count();
        let with_benchmark =
            indicators.iter().filter(|i| i.unhcr_refugees.is_some()).count();
        println!(
            "indicators: {} countries, {} with population, {} with benchmark counts",
            indicators.len(),
            with_population,
            with_benchmark
        );
    }
    if let Some(path) = seniority {
        let slices = read_seniority_file(path)?;
        let empty = slices.iter().filter(|s| s.total() == 0).count();
        println!("seniority: {} slices, {} fully censored", slices.len(), empty);
    }
    Ok(())
}

fn cmd_scale(snapshot_path: &Path, indicators_path: &Path, out: Option<&Path>) -> Result<()> {
    let snapshot = read_snapshot_file(snapshot_path)?;
    let indicators = read_indicators_file(indicators_path)?;
    let scaled = stages::scale_snapshot(&snapshot, &indicators)?;
    for skip in &scaled.skipped {
        log::warn!("{} skipped: {}", skip.country, skip.reason);
    }
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("scaled_estimates_{}.csv", scaled.date)));
    write_scaled_estimates(&scaled.estimates, &out)?;
    println!(
        "scaled {} series ({} skipped countries) into {}",
        scaled.estimates.len(),
        scaled.skipped.len(),
        out.display()
    );
    Ok(())
}

fn cmd_diff(files: &[PathBuf], out: &Path) -> Result<()> {
    let series = stages::load_scaled_series(files)?;
    let (records, notices) = stages::diff_records(&series)?;
    for notice in &notices {
        log::warn!("{notice}");
    }
    ensure_dir(out)?;
    report::write_diffs(&out.join("diffs.csv"), &records)?;
    let summaries = stages::stability_rows(&records)?;
    report::write_stability(&out.join("stability.csv"), &summaries)?;
    println!(
        "{} diffs over {} windows, {} stability rows, written to {}",
        records.len(),
        series.len() - 1,
        summaries.len(),
        out.display()
    );
    Ok(())
}

fn cmd_fit(panel_path: &Path, models: Option<Vec<String>>, out: &Path) -> Result<()> {
    let panel = read_panel_file(panel_path)?;
    let selection = match models {
        Some(names) => SchemaSelection::Subset(names),
        None => SchemaSelection::default(),
    };
    let specs = selection.resolve()?;
    let batch = stages::fit_schema(&panel, &specs)?;
    for (model, error) in &batch.failures {
        log::warn!("{model} failed: {error}");
    }
    ensure_dir(out)?;
    let fit_refs: Vec<&FitResult> = batch.fits.iter().collect();
    report::write_fits(&out.join("fits.csv"), &fit_refs)?;
    report::write_models(&out.join("models.csv"), &fit_refs)?;
    report::write_fit_errors(&out.join("fit_errors.csv"), &batch.failures)?;
    println!(
        "fitted {} of {} models on {} rows, written to {}",
        batch.fits.len(),
        specs.len(),
        panel.rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_shap(panel_path: &Path, model: Option<&str>, out: &Path) -> Result<()> {
    let panel = read_panel_file(panel_path)?;
    let fit = match model {
        Some(name) => {
            let spec = find_spec(name)?;
            ols_fit(&spec, &panel).with_context(|| format!("fitting {name}"))?
        }
        None => {
            let batch = stages::fit_schema(&panel, &ModelSpec::default_schema())?;
            stages::choose_shap_model(&batch, None)?.clone()
        }
    };
    let shap = shap_report(&fit, &panel)?;
    ensure_dir(out)?;
    report::write_shap_values(&out.join("shap_values.csv"), &fit, &shap)?;
    report::write_shap_summary(&out.join("shap_summary.csv"), &shap)?;
    println!(
        "attributed {} ({} countries), written to {}",
        fit.spec.name,
        shap.rows.len(),
        out.display()
    );
    Ok(())
}

fn find_spec(name: &str) -> Result<ModelSpec> {
    ModelSpec::default_schema()
        .into_iter()
        .find(|spec| spec.name == name)
        .ok_or_else(|| input_error(format!("unknown model {name:?}; see the built-in schema")))
}

fn cmd_validate(scaled_path: &Path, indicators_path: &Path, out: &Path) -> Result<()> {
    let estimates = nowcast_core::ingest::read_scaled_estimates(scaled_path)?;
    let totals = stages::country_total_map(&estimates);
    if totals.is_empty() {
        return Err(input_error(format!(
            "{}: no whole-country rows (empty gender and age cells)",
            scaled_path.display()
        )));
    }
    let indicators = read_indicators_file(indicators_path)?;
    let benchmark = stages::benchmark_map(&indicators);
    let validation = validation_join(&totals, &benchmark)?;
    ensure_dir(out)?;
    report::write_validation_pairs(&out.join("validation_pairs.csv"), &validation)?;
    report::write_validation_summary(&out.join("validation_summary.csv"), &validation)?;
    println!(
        "rho={} p={} over {} countries, written to {}",
        validation.correlation.rho,
        validation.correlation.p_value,
        validation.pairs.len(),
        out.display()
    );
    Ok(())
}

fn cmd_seniority(input: &Path, out: &Path, include_empty: bool) -> Result<()> {
    let slices = read_seniority_file(input)?;
    let shares = seniority_shares(&slices);
    let medians = seniority_medians(&shares, include_empty);
    ensure_dir(out)?;
    report::write_seniority_shares(&out.join("seniority_shares.csv"), &shares)?;
    report::write_seniority_medians(&out.join("seniority_medians.csv"), &medians)?;
    println!(
        "{} slices, {} median rows, written to {}",
        shares.len(),
        medians.len(),
        out.display()
    );
    Ok(())
}

fn cmd_simulate(out: &Path, config: &SyntheticConfig) -> Result<()> {
    let data = generate(config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = write_bundle(&data, out)?;

    // a config pointing at the emitted files, so the bundle runs as-is
    let snapshot_names: Vec<String> = files
        .snapshots
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let config_json = serde_json::json!({
        "snapshots": snapshot_names,
        "indicators": "indicators.csv",
        "schema": "default",
        "panel_snapshot": "first",
    });
    let config_path = out.join("config.json");
    let mut text = serde_json::to_string_pretty(&config_json)?;
    text.push('\n');
    fs::write(&config_path, text)
        .with_context(|| format!("writing {}", config_path.display()))?;

    println!(
        "bundle with {} snapshots of {} countries written to {}; run it with: nowcast run --config {}",
        files.snapshots.len(),
        config.n_countries,
        out.display(),
        config_path.display()
    );
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
