#![no_std]
// parameter checks are written `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Particle-filtered modified compressive sensing for joint tracking of
//! motion and sparse illumination change.
//!
//! The crate needs only `alloc`. File formats, the experiment driver and the
//! command line live in the `pafimocs` companion crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod filters;
pub mod legendre;
pub mod models;
pub mod observation;
#[cfg(feature = "test-oracles")]
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use filters::{FilterConfig, Tracker, Variant};
pub use legendre::{Dictionary, TemplatePatch};
pub use models::{CoeffVector, FullState, ModelParams, MotionState, SupportSet};
pub use observation::{Frame, NoiseModel};
pub use solver::{ModeTrackingProblem, SolverConfig, SolverResult};
