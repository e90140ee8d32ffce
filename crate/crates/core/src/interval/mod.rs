//! Interval and bin-partition arithmetic.
//!
//! Every interval-producing method in the crate speaks in terms of
//! [`PredictionInterval`] (one closed segment) and [`IntervalSet`] (a sorted
//! union of disjoint segments). Bins on the outcome axis are described by a
//! [`BinPartition`]; bins are left-closed and right-open, with the last bin
//! extending to `+inf`.

mod calibration;
mod partition;
mod set;

pub use calibration::{CalibrationRecord, CalibrationSet};
pub use partition::{BinPartition, PartitionOrigin};
pub use set::IntervalSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed interval `[lower, upper]` on the outcome axis.
///
/// `upper` may be `+inf` (and `lower` may be `-inf` when no support minimum
/// applies). Degenerate intervals with `lower == upper` are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    lower: f64,
    upper: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY {
            return Err(Error::InvalidInterval { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate interval `[value, value]`.
    pub fn point(value: f64) -> Result<Self> {
        Self::new(value, value)
    }

    /// `(-inf, +inf)`.
    pub fn everything() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    /// Closed membership test: both endpoints count as covered.
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    /// Smallest interval containing both `self` and `other`.
    pub fn span(&self, other: &Self) -> Self {
        Self {
            lower: self.lower.min(other.lower),
            upper: self.upper.max(other.upper),
        }
    }

    /// Returns `self` with its lower endpoint raised to `floor`, when that keeps it valid.
    pub(crate) fn clip_below(self, floor: f64) -> Self {
        if self.lower >= floor {
            return self;
        }
        if self.upper < floor {
            // whole interval lies below the floor: collapse onto it
            return Self {
                lower: floor,
                upper: floor,
            };
        }
        Self {
            lower: floor,
            upper: self.upper,
        }
    }
}

impl std::fmt::Display for PredictionInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lower, self.upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reversed_and_nan() {
        assert!(PredictionInterval::new(2.0, 1.0).is_err());
        assert!(PredictionInterval::new(f64::NAN, 1.0).is_err());
        assert!(PredictionInterval::new(f64::INFINITY, f64::INFINITY).is_err());
        assert!(PredictionInterval::new(3.0, 3.0).unwrap().is_degenerate());
        assert!(PredictionInterval::new(0.0, f64::INFINITY).is_ok());
    }

    #[test]
    fn closed_membership() {
        let iv = PredictionInterval::new(1.0, 2.0).unwrap();
        assert!(iv.contains(1.0));
        assert!(iv.contains(2.0));
        assert!(!iv.contains(2.0000001));
    }

    #[test]
    fn clip_below_floor() {
        let iv = PredictionInterval::new(-3.0, 2.0).unwrap();
        assert_eq!(iv.clip_below(0.0), PredictionInterval::new(0.0, 2.0).unwrap());
        let under = PredictionInterval::new(-3.0, -1.0).unwrap();
        assert_eq!(under.clip_below(0.0), PredictionInterval::point(0.0).unwrap());
    }
}
