//! Command-line front end for `catapult-core`: dataset loading, parallel
//! sweeps, and CSV/JSON output with the run configuration embedded in every
//! file.

pub mod cli;
pub mod commands;
pub mod datasets;
pub mod error;
pub mod output;

pub use error::{LabError, LabResult};
