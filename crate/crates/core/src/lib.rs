//! Core library for the nowcast pipeline: turning censored ad-audience
//! snapshots into scaled stock estimates, temporal stability summaries,
//! cross-country regressions and per-country attributions.
//!
//! Modules follow the data flow: [`datamodel`] defines the domain types,
//! [`ingest`] reads and generates them, [`scale`] converts raw audience
//! counts into penetration-adjusted estimates, [`temporal`] compares
//! snapshots over time, [`stats`] fits and scores linear models,
//! [`attribution`] decomposes fitted predictions into per-feature
//! contributions, and [`analysis`] covers seniority shares and the
//! external-benchmark rank correlation.

pub mod analysis;
pub mod attribution;
pub mod datamodel;
pub mod ingest;
pub mod scale;
pub mod stats;
pub mod temporal;

pub use datamodel::{
    AgeBucket, AudienceCell, CountryCode, CountryIndicators, CountryPanel, Gender, PanelRow,
    SeniorityRole, SenioritySlice, Snapshot,
};
