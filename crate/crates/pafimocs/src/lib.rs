//! Experiment harness for `pafimocs-core`: configuration files, sequence and
//! matrix formats, the Monte Carlo driver and the support analysis.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::{FilterSpec, Regime, SimConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult, MetricSeries, RunRecord};
