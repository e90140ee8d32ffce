use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::conformal::check_alpha;
use crate::error::{Error, Result};
use crate::interval::PredictionInterval;
use crate::models::OutcomeTransform;
use crate::stats::sample_sd;

/// `z` with `P(Z <= z) = p` for a standard normal `Z`.
pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(p)
}

/// `[exp(y_hat_log - z sigma), exp(y_hat_log + z sigma)]` with `z = z_{1 - alpha/2}`.
pub fn lognormal_interval(y_hat_log: f64, sigma_hat: f64, alpha: f64) -> Result<PredictionInterval> {
    NormalErrorModel::new(sigma_hat, alpha, OutcomeTransform::Log)?.interval(y_hat_log)
}

/// Normal errors with a fixed standard deviation on a transformed scale,
/// mapped back through the inverse transform. On the log scale this is the
/// log-normal prediction interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalErrorModel {
    sigma: f64,
    z: f64,
    transform: OutcomeTransform,
}

impl NormalErrorModel {
    pub fn new(sigma: f64, alpha: f64, transform: OutcomeTransform) -> Result<Self> {
        check_alpha(alpha)?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidDispersion(sigma));
        }
        Ok(Self {
            sigma,
            z: standard_normal_quantile(1.0 - alpha / 2.0),
            transform,
        })
    }

    /// `sigma` is the sample standard deviation of calibration residuals
    /// `transform(y_true) - y_pred_scaled`.
    pub fn fit(
        y_true: &[f64],
        y_pred_scaled: &[f64],
        transform: OutcomeTransform,
        alpha: f64,
    ) -> Result<Self> {
        if y_true.len() != y_pred_scaled.len() {
            return Err(Error::Shape(format!(
                "{} observed values but {} predictions",
                y_true.len(),
                y_pred_scaled.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let resid = y_true
            .iter()
            .zip(y_pred_scaled)
            .map(|(&y, &p)| transform.forward(y).map(|t| t - p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sample_sd(&resid), alpha, transform)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn interval(&self, y_hat_scaled: f64) -> Result<PredictionInterval> {
        let half = self.z * self.sigma;
        let lo = self.transform.inverse(y_hat_scaled - half).0;
        let hi = self.transform.inverse(y_hat_scaled + half).0;
        PredictionInterval::new(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_lognormal_at_ten_percent() {
        // z_{0.95} from standard tables: 1.644854
        let iv = lognormal_interval(0.0, 1.0, 0.1).unwrap();
        assert!((iv.lower() - (-1.644854f64).exp()).abs() < 1e-6);
        assert!((iv.upper() - 1.644854f64.exp()).abs() < 1e-5);
        assert!((iv.lower() - 0.1930).abs() < 1e-4);
        assert!((iv.upper() - 5.1810).abs() < 1e-3);
    }

    #[test]
    fn tiny_sigma_is_nearly_degenerate() {
        let iv = lognormal_interval(1.0, 1e-12, 0.1).unwrap();
        assert!((iv.lower() - 1f64.exp()).abs() < 1e-9);
        assert!((iv.upper() - 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(matches!(
            lognormal_interval(0.0, 0.0, 0.1),
            Err(Error::InvalidDispersion(_))
        ));
        assert!(lognormal_interval(0.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn fit_uses_sample_sd_of_log_residuals() {
        let y = [1f64.exp(), 3f64.exp()];
        let m = NormalErrorModel::fit(&y, &[2.0, 2.0], OutcomeTransform::Log, 0.1).unwrap();
        assert!((m.sigma() - 2f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_in_sigma_and_multiplicative_in_shift(
            mu in -3.0f64..3.0,
            s in 0.05f64..2.0,
            ds in 0.01f64..1.0,
            c in -2.0f64..2.0,
        ) {
            let a = lognormal_interval(mu, s, 0.1).unwrap();
            let b = lognormal_interval(mu, s + ds, 0.1).unwrap();
            prop_assert!(b.lower() < a.lower() && b.upper() > a.upper());
            let shifted = lognormal_interval(mu + c, s, 0.1).unwrap();
            let f = c.exp();
            prop_assert!((shifted.lower() - a.lower() * f).abs() <= 1e-10 * shifted.lower());
            prop_assert!((shifted.upper() - a.upper() * f).abs() <= 1e-10 * shifted.upper());
        }
    }
}
