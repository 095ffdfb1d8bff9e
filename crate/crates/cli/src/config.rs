//! Run configuration: one JSON file with explicit paths, no discovery.
//! Relative paths inside the file resolve against the file's directory,
//! so a config can travel with its data.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use nowcast_core::stats::ModelSpec;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::stages::input_error;

/// Which snapshot's estimates feed the regression panel when several
/// snapshots are configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum PanelSnapshot {
    First,
    Last,
    Date(NaiveDate),
}

impl Default for PanelSnapshot {
    fn default() -> Self {
        PanelSnapshot::First
    }
}

impl TryFrom<String> for PanelSnapshot {
    type Error = String;

    fn try_from(value: String) -> Result<Self, String> {
        match value.as_str() {
            "first" => Ok(PanelSnapshot::First),
            "last" => Ok(PanelSnapshot::Last),
            other => other.parse().map(PanelSnapshot::Date).map_err(|_| {
                format!("panel_snapshot must be \"first\", \"last\" or a YYYY-MM-DD date, got {other:?}")
            }),
        }
    }
}

impl std::fmt::Display for PanelSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PanelSnapshot::First => f.write_str("first"),
            PanelSnapshot::Last => f.write_str("last"),
            PanelSnapshot::Date(d) => write!(f, "{d}"),
        }
    }
}

/// Model selection: the whole built-in schema, or a subset of it by name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SchemaSelection {
    Preset(String),
    Subset(Vec<String>),
}

impl Default for SchemaSelection {
    fn default() -> Self {
        SchemaSelection::Preset("default".to_string())
    }
}

impl SchemaSelection {
    /// Materializes the selection against the built-in schema. Unknown
    /// preset or model names are input errors listing what exists.
    pub fn resolve(&self) -> Result<Vec<ModelSpec>> {
        let all = ModelSpec::default_schema();
        match self {
            SchemaSelection::Preset(name) if name == "default" => Ok(all),
            SchemaSelection::Preset(other) => Err(input_error(format!(
                "unknown schema preset {other:?}; use \"default\" or a list of model names"
            ))),
            SchemaSelection::Subset(names) => {
                if names.is_empty() {
                    return Err(input_error("schema model list is empty"));
                }
                names
                    .iter()
                    .map(|name| {
                        all.iter().find(|spec| &spec.name == name).cloned().ok_or_else(|| {
                            input_error(format!(
                                "unknown model {name:?}; available: {}",
                                all.iter()
                                    .map(|s| s.name.as_str())
                                    .collect::<Vec<_>>()
                                    .join(", ")
                            ))
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Everything the `run` subcommand needs, as stored on disk. Optional
/// fields fall back to defaults; command-line flags override them.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub snapshots: Vec<PathBuf>,
    pub indicators: PathBuf,
    #[serde(default)]
    pub seniority: Option<PathBuf>,
    #[serde(default)]
    pub schema: SchemaSelection,
    #[serde(default)]
    pub panel_snapshot: PanelSnapshot,
    #[serde(default)]
    pub include_zero_estimates: Option<bool>,
    #[serde(default)]
    pub log_linkedin: Option<bool>,
    /// Model whose attributions are reported; default is the successful
    /// fit with the highest adjusted R².
    #[serde(default)]
    pub shap_model: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// A parsed config plus the digest of its raw bytes and the directory
/// its relative paths resolve against.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub digest: String,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes =
        fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if config.snapshots.is_empty() {
        return Err(input_error(format!("{}: config lists no snapshot files", path.display())));
    }
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok(LoadedConfig { config, digest: hex::encode(Sha256::digest(&bytes)), base_dir })
}

/// Joins a config-relative path onto the config's directory; absolute
/// paths pass through.
pub fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}
