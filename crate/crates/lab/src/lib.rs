//! Experiment harness around `dam-core`: configs, file formats, the run
//! pipeline, budget sweeps and reports.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod record;
pub mod report;

pub use config::{ExperimentConfig, Variant};
pub use error::{LabError, Result};
pub use record::RunRecord;
