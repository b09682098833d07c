//! File formats, the training driver and the command line for factlab.
//!
//! The numerical kernels live in `factlab-core`; this crate adds
//! everything that touches the file system: configuration, knowledge-set
//! and trace files, checkpoints, CSV tables, SVG plots and reports.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod hashing;
pub mod report;
pub mod runner;
pub mod svg;
pub mod tables;
pub mod tracefile;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::CliError;
