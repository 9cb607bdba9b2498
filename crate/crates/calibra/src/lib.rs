//! Datasets, backends, caching, run orchestration and reports for
//! calibration experiments built on `calibra-core`.

pub mod augment;
pub mod cache;
pub mod config;
pub mod dataset;
pub mod error;
pub mod http;
pub mod report;
pub mod run;
pub mod sweep;

pub use calibra_core as core;
pub use error::{Error, Result};
