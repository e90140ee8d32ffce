use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::check_alpha;
use crate::error::{Error, Result};
use crate::interval::PredictionInterval;
use crate::models::OutcomeTransform;
use crate::stats::{quantile_sorted, sorted_copy};

pub const DEFAULT_BOOTSTRAP_DRAWS: usize = 2_000;

/// Calibration prediction errors on one scale.
///
/// Errors are stored as `prediction - observed` on the scale named by
/// `scale`; simulated outcomes are `y_hat + error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPool {
    errors: Vec<f64>,
    scale: OutcomeTransform,
}

impl ResidualPool {
    pub fn new(errors: Vec<f64>, scale: OutcomeTransform) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::Shape("non-finite residual".into()));
        }
        Ok(Self { errors, scale })
    }

    /// Builds the pool from raw observed outcomes and predictions already on
    /// the pool's scale.
    pub fn from_calibration(
        y_true: &[f64],
        y_pred_scaled: &[f64],
        scale: OutcomeTransform,
    ) -> Result<Self> {
        if y_true.len() != y_pred_scaled.len() {
            return Err(Error::Shape(format!(
                "{} observed values but {} predictions",
                y_true.len(),
                y_pred_scaled.len()
            )));
        }
        let errors = y_true
            .iter()
            .zip(y_pred_scaled)
            .map(|(&y, &p)| scale.forward(y).map(|t| p - t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(errors, scale)
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn scale(&self) -> OutcomeTransform {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Empirical `alpha/2` and `1 - alpha/2` quantiles of `draws` errors
/// resampled with replacement from a pool. Reusable across test cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapQuantiles {
    lower_shift: f64,
    upper_shift: f64,
    scale: OutcomeTransform,
    support_min: f64,
}

impl BootstrapQuantiles {
    pub fn draw(pool: &ResidualPool, alpha: f64, draws: usize, seed: u64) -> Result<Self> {
        check_alpha(alpha)?;
        if draws < 100 {
            return Err(Error::param("draws", format!("need at least 100, got {draws}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = pool.errors.len();
        let sample: Vec<f64> = (0..draws)
            .map(|_| pool.errors[rng.random_range(0..n)])
            .collect();
        let sorted = sorted_copy(&sample);
        Ok(Self {
            lower_shift: quantile_sorted(&sorted, alpha / 2.0),
            upper_shift: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
            scale: pool.scale,
            support_min: pool.scale.raw_floor(),
        })
    }

    /// Raises the raw-scale floor, e.g. to 0 for counts fitted on the raw scale.
    pub fn with_support_min(mut self, support_min: f64) -> Self {
        self.support_min = self.support_min.max(support_min);
        self
    }

    pub fn scale(&self) -> OutcomeTransform {
        self.scale
    }

    pub fn shifts(&self) -> (f64, f64) {
        (self.lower_shift, self.upper_shift)
    }

    /// Interval for a prediction given on the pool's scale, returned on the raw scale.
    pub fn interval(&self, y_hat_scaled: f64) -> Result<PredictionInterval> {
        let lo = self.scale.inverse(y_hat_scaled + self.lower_shift).0;
        let hi = self.scale.inverse(y_hat_scaled + self.upper_shift).0;
        let iv = PredictionInterval::new(lo, hi)?;
        Ok(if self.support_min.is_finite() {
            iv.clip_below(self.support_min)
        } else {
            iv
        })
    }
}

/// One-shot residual bootstrap interval for a single prediction.
pub fn bootstrap_interval(
    y_hat_scaled: f64,
    pool: &ResidualPool,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<PredictionInterval> {
    BootstrapQuantiles::draw(pool, alpha, draws, seed)?.interval(y_hat_scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_pool_gives_point() {
        let pool = ResidualPool::new(vec![0.0; 10], OutcomeTransform::Identity).unwrap();
        let iv = bootstrap_interval(4.2, &pool, 0.1, 500, 1).unwrap();
        assert_eq!((iv.lower(), iv.upper()), (4.2, 4.2));
    }

    #[test]
    fn two_point_pool_at_half_alpha() {
        // resampling {-1, 1}: the 0.25 and 0.75 quantiles of a large sample are
        // -1 and 1 unless the sample is almost all one value
        let pool = ResidualPool::new(vec![-1.0, 1.0], OutcomeTransform::Identity).unwrap();
        let iv = bootstrap_interval(10.0, &pool, 0.5, 20_000, 7).unwrap();
        assert_eq!((iv.lower(), iv.upper()), (9.0, 11.0));
    }

    #[test]
    fn empty_pool_and_small_b_rejected() {
        assert!(matches!(
            ResidualPool::new(vec![], OutcomeTransform::Identity),
            Err(Error::EmptyCalibration)
        ));
        let pool = ResidualPool::new(vec![1.0], OutcomeTransform::Identity).unwrap();
        assert!(bootstrap_interval(0.0, &pool, 0.1, 50, 0).is_err());
    }

    #[test]
    fn errors_are_prediction_minus_observed() {
        let pool =
            ResidualPool::from_calibration(&[3.0, 5.0], &[4.0, 4.0], OutcomeTransform::Identity)
                .unwrap();
        assert_eq!(pool.errors(), &[1.0, -1.0]);
        let log = ResidualPool::from_calibration(&[1.0], &[0.5], OutcomeTransform::Log).unwrap();
        assert_eq!(log.errors(), &[0.5]);
    }

    #[test]
    fn seeded_draws_are_reproducible_and_converge() {
        let errors: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let pool = ResidualPool::new(errors, OutcomeTransform::Identity).unwrap();
        let a = bootstrap_interval(0.0, &pool, 0.1, 4_000, 11).unwrap();
        let b = bootstrap_interval(0.0, &pool, 0.1, 4_000, 11).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_interval(0.0, &pool, 0.1, 8_000, 12).unwrap();
        // pool range is [0, 10]; quantile noise at these sizes is well under 0.5
        assert!((a.lower() - c.lower()).abs() < 0.5);
        assert!((a.upper() - c.upper()).abs() < 0.5);
    }

    #[test]
    fn log1p_scale_is_clamped_at_zero() {
        let pool = ResidualPool::new(vec![-3.0, -2.0, 0.0, 1.0], OutcomeTransform::Log1p).unwrap();
        let iv = bootstrap_interval(0.1, &pool, 0.2, 1_000, 3).unwrap();
        assert_eq!(iv.lower(), 0.0);
        assert!(iv.upper() > 0.0);
    }
}
