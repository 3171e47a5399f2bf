//! Batch front end for the `metricforge` library: manifest ingestion,
//! depth-map file formats, run configuration and JSON reports.

pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod report;
pub mod runner;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use manifest::{Manifest, Sample};
pub use report::RunReport;
pub use runner::{run, Command, RunOptions};
