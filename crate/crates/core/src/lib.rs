//! Interval censored recursive forests.
//!
//! Survival curves, the Turnbull NPMLE, kernel smoothing, split rules, trees,
//! the recursive forest, error functionals, simulation scenarios, data I/O and
//! the benchmark harness.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod forest;
pub mod io;
pub mod metrics;
pub mod npmle;
pub mod simgen;
pub mod smooth;
pub mod split;
pub mod survcurve;
pub mod tree;

pub use error::{IcrfError, Result};
pub use forest::{fit, ForestParams, IcrfModel};
pub use io::Dataset;
pub use survcurve::{IntervalObservation, LinearSurvival, StepSurvival};
