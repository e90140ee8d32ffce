//! Bin-conditional conformal prediction intervals.
//!
//! Standard split-conformal prediction (SCP) guarantees marginal coverage but
//! can badly under-cover the tail of a skewed outcome. Bin-conditional
//! conformal prediction (BCCP) calibrates one quantile per bin of the observed
//! outcome and delivers the nominal coverage inside every bin.
//!
//! The crate also ships the comparison baselines, the simulation studies used
//! to evaluate them and a replication harness.

pub mod baselines;
pub mod conformal;
pub mod error;
pub mod evaluation;
pub mod flags;
pub mod interval;
pub mod io;
pub mod methods;
pub mod models;
pub mod simulation;
mod stats;

pub use conformal::{ConformalCalibration, EmptyBinPolicy, NonconformityMeasure};
pub use error::{Error, ErrorClass, Result};
pub use flags::{FlaggedSet, IntervalFlags};
pub use interval::{BinPartition, CalibrationSet, IntervalSet, PredictionInterval};
pub use methods::{BinSpec, Method};
