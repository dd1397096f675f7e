//! CSV ingestion, run configuration, report emission and the command
//! implementations behind the `arbcurve` binary.

pub mod commands;
pub mod config;
mod csv_panel;
pub mod report;

pub use csv_panel::{emit_panel, ingest_csv, read_panel, write_panel, IngestOptions};
