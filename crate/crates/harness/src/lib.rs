//! Experiment harness for `opwalk-core`.
//!
//! A run is described by a TOML [`config::ExperimentConfig`], checked by
//! [`experiments::validate`] and executed by [`run::run`], which writes one
//! JSON line per replica plus CSV summaries. Results depend only on the
//! config (seed included), never on the thread count.

pub mod cli;
pub mod config;
pub mod envfile;
pub mod error;
pub mod experiments;
pub mod export;
pub mod records;
pub mod run;

pub use config::{ExperimentConfig, Format, Kind};
pub use error::HarnessError;
pub use experiments::{validate, Validated};
pub use run::{run, ExperimentRecord, RunOptions};
