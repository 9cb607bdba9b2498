//! Calibration evaluation for LLM question answering: prompting strategies,
//! confidence extraction and calibration metrics.
//!
//! Everything here is pure and `no_std` (with `alloc`); IO, HTTP and the
//! command line live in the `calibra` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backend;
pub mod concern;
pub mod confidence;
pub mod metrics;
pub mod mock;
pub mod qa;
pub mod strategy;
