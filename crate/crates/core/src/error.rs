//! Error type shared by every module of the core crate.

use alloc::string::String;

/// Errors raised by model construction, fitting, solving and filtering.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A model or algorithm parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter {
        /// Parameter name as used in config files.
        name: &'static str,
        /// Human readable explanation.
        reason: String,
    },

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimension mismatch or unusable size.
    #[error("size error: {0}")]
    Size(String),

    /// Input contract violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Normal equations are (numerically) singular.
    #[error("rank-deficient least squares system (condition number {condition:e})")]
    RankDeficient {
        /// Ratio of extreme Gram eigenvalues; infinite for exact singularity.
        condition: f64,
    },

    /// NaN or infinite value where a finite number is required.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    /// The brute-force oracle refuses problems above its enumeration guard.
    #[error("enumeration guard exceeded: n_lambda = {n_lambda} > {limit}")]
    EnumerationGuard {
        /// Problem dimension requested.
        n_lambda: usize,
        /// Largest dimension the oracle accepts.
        limit: usize,
    },

    /// The motion state maps the template outside the frame.
    #[error("region of interest falls outside the frame")]
    InvalidRoi,

    /// Every particle has zero weight.
    #[error("tracker lost at step {step}: all {n_particles} particles have zero weight ({invalid_roi} with out-of-frame ROI)")]
    TrackerLost {
        /// Step counter at which the loss happened.
        step: usize,
        /// Number of particles in the set.
        n_particles: usize,
        /// How many of them had an out-of-frame region of interest.
        invalid_roi: usize,
    },
}

/// Result alias for the core crate.
pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
