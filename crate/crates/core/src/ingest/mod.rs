//! File input and output, the replayable query archive, and the synthetic
//! data generator.
//!
//! All readers are strict: headers must match exactly, every row error is
//! reported with its line number, and snapshots are validated after
//! parsing. All writers produce deterministic output for deterministic
//! input (stable row order, shortest round-trip float formatting).

mod files;
mod replay;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::datamodel::Violation;

pub use files::{
    filename_date, read_indicators_file, read_panel_file, read_scaled_estimates,
    read_seniority_file, read_snapshot_file, write_indicators_file, write_panel_file,
    write_scaled_estimates, write_snapshot_file, INDICATOR_HEADERS, PANEL_HEADERS,
    SCALED_HEADERS, SENIORITY_HEADERS, SNAPSHOT_HEADERS,
};
pub use replay::{AudienceQuery, ReplayArchive};
pub use synthetic::{
    generate, write_bundle, BundleFiles, PlantedTruth, SyntheticConfig, SyntheticData,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// File-level problem: bad headers, no data rows, filename and content
    /// disagreeing, unreadable CSV structure.
    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    /// Row-level problem, pinned to a 1-based line number.
    #[error("{}:{line}: {message}", path.display())]
    Row { path: PathBuf, line: u64, message: String },
    /// Parsed fine but the snapshot breaks invariants.
    #[error("{}: snapshot breaks {} invariant(s), first: {}", path.display(), violations.len(), summarize(violations))]
    InvalidSnapshot { path: PathBuf, violations: Vec<Violation> },
    /// Replay archive has no entry for the requested query/date.
    #[error("no archived count for key {key}")]
    MissingKey { key: String },
    /// Synthetic generator configuration that cannot be realized.
    #[error("invalid generator parameter: {message}")]
    Parameter { message: String },
}

fn summarize(violations: &[Violation]) -> String {
    match violations.first() {
        Some(v) => format!("{} ({})", v.key, v.rule),
        None => "none".to_string(),
    }
}
