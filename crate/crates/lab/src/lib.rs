//! File formats, run directories and the command-line front end for
//! `tee-core` experiments.

pub mod checkpoint;
pub mod config_file;
pub mod dataset;
pub mod error;
pub mod json;
pub mod records;
pub mod report_io;
pub mod run_dir;

pub use error::{LabError, LabResult};
