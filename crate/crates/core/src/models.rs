//! Point-prediction models: ordinary least squares on a transformed outcome.
//!
//! The conformal layer only ever sees `(y_true, y_pred)` pairs, so any model
//! can be plugged in through the CSV interface. This module provides the
//! linear models the bundled simulation studies need.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{IntervalSet, PredictionInterval};

/// Invertible outcome transform applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutcomeTransform {
    #[default]
    Identity,
    /// Natural log; requires `y > 0`.
    Log,
    /// `ln(1 + y)`; requires `y >= 0`. Inverse `e^t - 1`, clamped at 0.
    Log1p,
}

impl OutcomeTransform {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeTransform::Identity => "identity",
            OutcomeTransform::Log => "log",
            OutcomeTransform::Log1p => "log1p",
        }
    }

    pub fn forward(self, y: f64) -> Result<f64> {
        let ok = match self {
            OutcomeTransform::Identity => y.is_finite(),
            OutcomeTransform::Log => y.is_finite() && y > 0.0,
            OutcomeTransform::Log1p => y.is_finite() && y >= 0.0,
        };
        if !ok {
            return Err(Error::TransformDomain {
                transform: self.name(),
                value: y,
            });
        }
        Ok(match self {
            OutcomeTransform::Identity => y,
            OutcomeTransform::Log => y.ln(),
            OutcomeTransform::Log1p => y.ln_1p(),
        })
    }

    pub fn forward_all(self, ys: &[f64]) -> Result<Vec<f64>> {
        ys.iter().map(|&y| self.forward(y)).collect()
    }

    /// Back to the raw scale. The bool is set when a log1p inverse fell below
    /// zero and was clamped.
    pub fn inverse(self, t: f64) -> (f64, bool) {
        match self {
            OutcomeTransform::Identity => (t, false),
            OutcomeTransform::Log => (t.exp(), false),
            OutcomeTransform::Log1p => {
                let raw = t.exp_m1();
                if raw < 0.0 {
                    (0.0, true)
                } else {
                    (raw, false)
                }
            }
        }
    }

    /// Lowest raw value the inverse can produce.
    pub fn raw_floor(self) -> f64 {
        match self {
            OutcomeTransform::Identity => f64::NEG_INFINITY,
            OutcomeTransform::Log | OutcomeTransform::Log1p => 0.0,
        }
    }
}

impl std::str::FromStr for OutcomeTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(OutcomeTransform::Identity),
            "log" => Ok(OutcomeTransform::Log),
            "log1p" => Ok(OutcomeTransform::Log1p),
            other => Err(Error::param("transform", format!("unknown transform `{other}`"))),
        }
    }
}

/// `[1 | features]`.
pub(crate) fn design_matrix(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = features.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { features[(i, j - 1)] })
}

/// Least squares via thin QR; fails on a numerically rank-deficient design.
pub(crate) fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, k) = design.shape();
    if n < k {
        return Err(Error::SingularDesign);
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * max_diag) {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)
}

/// Intercept-plus-slopes model fitted on a transformed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `[intercept, slope_1, ..., slope_p]`
    coefficients: Vec<f64>,
    transform: OutcomeTransform,
}

/// A prediction on both scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub transformed: f64,
    pub raw: f64,
    /// The raw value was clamped at 0 by the log1p inverse.
    pub clamped: bool,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, transform: OutcomeTransform) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::param("coefficients", "need at least an intercept"));
        }
        Ok(Self {
            coefficients,
            transform,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn transform(&self) -> OutcomeTransform {
        self.transform
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.n_features(),
                x.len()
            )));
        }
        let t = self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        let (raw, clamped) = self.transform.inverse(t);
        Ok(Prediction {
            transformed: t,
            raw,
            clamped,
        })
    }

    /// Predictions for every row of `features`.
    pub fn predict_rows(&self, features: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        let mut row: Vec<f64> = Vec::with_capacity(features.ncols());
        (0..features.nrows())
            .map(|i| {
                row.clear();
                row.extend(features.row(i).iter());
                self.predict(&row)
            })
            .collect()
    }
}

/// Ordinary least squares of `transform(y)` on `[1 | features]`.
pub fn ols_fit(features: &DMatrix<f64>, y: &[f64], transform: OutcomeTransform) -> Result<LinearModel> {
    let (n, p) = features.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} outcomes", y.len())));
    }
    if n < p + 1 {
        return Err(Error::SingularDesign);
    }
    let target = DVector::from_vec(transform.forward_all(y)?);
    let beta = least_squares(&design_matrix(features), &target)?;
    LinearModel::new(beta.iter().copied().collect(), transform)
}

fn round_half_up(x: f64) -> f64 {
    let f = x.floor();
    if x - f >= 0.5 {
        f + 1.0
    } else {
        f
    }
}

/// Rounds both bounds to the nearest integer (ties up) and clamps the lower
/// bound at zero. Infinite bounds are left alone.
pub fn round_count_interval(interval: &PredictionInterval) -> PredictionInterval {
    let lower = if interval.lower().is_finite() {
        round_half_up(interval.lower()).max(0.0)
    } else {
        0.0
    };
    let upper = if interval.upper().is_finite() {
        round_half_up(interval.upper()).max(lower)
    } else {
        interval.upper()
    };
    PredictionInterval::new(lower, upper).expect("rounded bounds are ordered")
}

/// [`round_count_interval`] applied per segment, re-merged.
pub fn round_count_set(set: &IntervalSet) -> IntervalSet {
    set.map_segments(round_count_interval)
}
