use serde::{Deserialize, Serialize};

use super::BinPartition;
use crate::conformal::NonconformityMeasure;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub y_true: f64,
    pub y_pred: f64,
    pub score: f64,
}

/// Held-out `(y_true, y_pred)` pairs with their nonconformity scores.
///
/// After [`CalibrationSet::with_partition`] every record also carries the
/// index of the bin its `y_true` falls in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    measure: NonconformityMeasure,
    records: Vec<CalibrationRecord>,
    bins: Option<Vec<usize>>,
}

impl CalibrationSet {
    pub fn new(y_true: &[f64], y_pred: &[f64], measure: NonconformityMeasure) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!(
                "{} observed values but {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if let Some(bad) = y_true.iter().chain(y_pred).find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite calibration value {bad}")));
        }
        let records = y_true
            .iter()
            .zip(y_pred)
            .map(|(&y, &p)| CalibrationRecord {
                y_true: y,
                y_pred: p,
                score: measure.score(y, p),
            })
            .collect();
        Ok(Self {
            measure,
            records,
            bins: None,
        })
    }

    /// Assigns every record to a bin by its observed `y_true`.
    pub fn with_partition(mut self, partition: &BinPartition) -> Result<Self> {
        let bins = self
            .records
            .iter()
            .map(|r| partition.assign_bin(r.y_true))
            .collect::<Result<Vec<_>>>()?;
        self.bins = Some(bins);
        Ok(self)
    }

    pub fn measure(&self) -> NonconformityMeasure {
        self.measure
    }

    pub fn records(&self) -> &[CalibrationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn y_true(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_true).collect()
    }

    pub fn y_pred(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_pred).collect()
    }

    pub fn bin_indices(&self) -> Option<&[usize]> {
        self.bins.as_deref()
    }

    /// Scores grouped by bin; `None` until a partition has been applied.
    pub fn binned_scores(&self, n_bins: usize) -> Option<Vec<Vec<f64>>> {
        let bins = self.bins.as_ref()?;
        let mut out = vec![Vec::new(); n_bins];
        for (r, &b) in self.records.iter().zip(bins) {
            out[b].push(r.score);
        }
        Some(out)
    }
}
