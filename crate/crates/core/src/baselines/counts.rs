use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;

use crate::conformal::check_alpha;
use crate::error::{Error, Result};
use crate::interval::PredictionInterval;
use crate::stats::mean;

/// Smallest `k >= 0` with `cdf(k) >= p`, for a non-decreasing `cdf` on the
/// non-negative integers that reaches `p` eventually.
fn discrete_quantile(cdf: impl Fn(u64) -> f64, p: f64, guess: u64) -> u64 {
    if cdf(0) >= p {
        return 0;
    }
    let mut lo = 0u64; // cdf(lo) < p
    let mut hi = guess.max(1);
    while cdf(hi) < p {
        lo = hi;
        hi = hi.saturating_mul(2);
        if hi == u64::MAX {
            return hi;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn poisson_cdf(k: u64, mu: f64) -> f64 {
    gamma_ur(k as f64 + 1.0, mu)
}

fn negbinom_cdf(k: u64, mu: f64, size: f64) -> f64 {
    beta_reg(size, k as f64 + 1.0, size / (size + mu))
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::param("mu", format!("{mu} is not a finite non-negative mean")));
    }
    Ok(())
}

/// `[alpha/2, 1 - alpha/2]` quantiles of Poisson(`mu`).
pub fn poisson_interval(mu: f64, alpha: f64) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    check_mu(mu)?;
    if mu == 0.0 {
        return PredictionInterval::point(0.0);
    }
    let guess = (mu + 3.0 * mu.sqrt()).ceil() as u64;
    let lo = discrete_quantile(|k| poisson_cdf(k, mu), alpha / 2.0, guess);
    let hi = discrete_quantile(|k| poisson_cdf(k, mu), 1.0 - alpha / 2.0, guess);
    PredictionInterval::new(lo as f64, hi as f64)
}

/// `[alpha/2, 1 - alpha/2]` quantiles of the negative binomial with mean `mu`
/// and variance `mu + mu^2 / dispersion`.
pub fn negbinom_interval(mu: f64, dispersion: f64, alpha: f64) -> Result<PredictionInterval> {
    check_alpha(alpha)?;
    check_mu(mu)?;
    if !(dispersion.is_finite() && dispersion > 0.0) {
        return Err(Error::InvalidDispersion(dispersion));
    }
    if mu == 0.0 {
        return PredictionInterval::point(0.0);
    }
    let sd = (mu + mu * mu / dispersion).sqrt();
    let guess = (mu + 3.0 * sd).ceil() as u64;
    let lo = discrete_quantile(|k| negbinom_cdf(k, mu, dispersion), alpha / 2.0, guess);
    let hi = discrete_quantile(|k| negbinom_cdf(k, mu, dispersion), 1.0 - alpha / 2.0, guess);
    PredictionInterval::new(lo as f64, hi as f64)
}

/// Count distribution used to turn a predicted mean into an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CountModel {
    Poisson,
    NegBinom { dispersion: f64 },
}

impl CountModel {
    /// Method-of-moments dispersion from calibration pairs: the mean of the
    /// predictions stands in for `mu`, the mean squared prediction error for
    /// the variance, and `dispersion = mu^2 / (variance - mu)`.
    ///
    /// Returns the Poisson model and `true` when the moments imply
    /// underdispersion (`variance <= mu`).
    pub fn method_of_moments(y_true: &[f64], y_pred: &[f64]) -> Result<(Self, bool)> {
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
        let mu = mean(y_pred);
        let var = y_true
            .iter()
            .zip(y_pred)
            .map(|(y, p)| (y - p) * (y - p))
            .sum::<f64>()
            / y_true.len() as f64;
        if mu <= 0.0 || mu.is_nan() || var <= mu {
            return Ok((CountModel::Poisson, true));
        }
        Ok((
            CountModel::NegBinom {
                dispersion: mu * mu / (var - mu),
            },
            false,
        ))
    }

    pub fn interval(&self, mu: f64, alpha: f64) -> Result<PredictionInterval> {
        match *self {
            CountModel::Poisson => poisson_interval(mu, alpha),
            CountModel::NegBinom { dispersion } => negbinom_interval(mu, dispersion, alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Poisson CDF by summing the pmf directly.
    fn poisson_cdf_sum(k: u64, mu: f64) -> f64 {
        let mut term = (-mu).exp();
        let mut total = term;
        for i in 1..=k {
            term *= mu / i as f64;
            total += term;
        }
        total
    }

    fn smallest_k_at_least(mu: f64, p: f64) -> u64 {
        (0..).find(|&k| poisson_cdf_sum(k, mu) >= p).unwrap()
    }

    /// Negative binomial pmf by the recurrence P(k+1) = P(k) (k + r) / (k + 1) (1 - q).
    fn negbinom_cdf_sum(k: u64, mu: f64, r: f64) -> f64 {
        let q = r / (r + mu);
        let mut term = q.powf(r);
        let mut total = term;
        for i in 0..k {
            term *= (i as f64 + r) / (i as f64 + 1.0) * (1.0 - q);
            total += term;
        }
        total
    }

    #[test]
    fn poisson_mean_four() {
        assert_eq!(smallest_k_at_least(4.0, 0.05), 1);
        assert_eq!(smallest_k_at_least(4.0, 0.95), 8);
        let iv = poisson_interval(4.0, 0.1).unwrap();
        assert_eq!((iv.lower(), iv.upper()), (1.0, 8.0));
    }

    #[test]
    fn poisson_zero_mean() {
        let iv = poisson_interval(0.0, 0.1).unwrap();
        assert_eq!((iv.lower(), iv.upper()), (0.0, 0.0));
        assert!(poisson_interval(-1.0, 0.1).is_err());
    }

    #[test]
    fn poisson_matches_summation_oracle() {
        for &mu in &[0.01, 0.3, 1.0, 2.5, 7.0, 15.0, 60.0, 250.0] {
            for &alpha in &[0.05, 0.1, 0.2, 0.5] {
                let iv = poisson_interval(mu, alpha).unwrap();
                assert_eq!(iv.lower() as u64, smallest_k_at_least(mu, alpha / 2.0), "mu {mu}");
                assert_eq!(iv.upper() as u64, smallest_k_at_least(mu, 1.0 - alpha / 2.0), "mu {mu}");
            }
        }
    }

    #[test]
    fn negbinom_matches_summation_oracle() {
        for &(mu, r) in &[(0.5, 0.2), (3.0, 1.0), (10.0, 2.5), (40.0, 0.7)] {
            let iv = negbinom_interval(mu, r, 0.1).unwrap();
            let lo = (0..).find(|&k| negbinom_cdf_sum(k, mu, r) >= 0.05).unwrap();
            let hi = (0..).find(|&k| negbinom_cdf_sum(k, mu, r) >= 0.95).unwrap();
            assert_eq!((iv.lower() as u64, iv.upper() as u64), (lo, hi), "mu {mu} r {r}");
        }
    }

    #[test]
    fn underdispersion_falls_back_to_poisson() {
        let (m, fallback) = CountModel::method_of_moments(&[2.0, 3.0, 4.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(m, CountModel::Poisson);
        assert!(fallback);
        let (m, fallback) =
            CountModel::method_of_moments(&[0.0, 0.0, 20.0, 0.0], &[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert!(!fallback);
        // var = (4 + 4 + 324 + 4) / 4 = 84, mu = 2 -> 4 / 82
        match m {
            CountModel::NegBinom { dispersion } => assert!((dispersion - 4.0 / 82.0).abs() < 1e-12),
            _ => panic!("expected negative binomial"),
        }
    }

    proptest! {
        #[test]
        fn count_intervals_hold_their_mass(mu in 0.0f64..80.0, r in 0.1f64..20.0, alpha in 0.02f64..0.6) {
            for (iv, cdf) in [
                (poisson_interval(mu, alpha).unwrap(), Box::new(move |k: i64| if k < 0 { 0.0 } else { poisson_cdf_sum(k as u64, mu) }) as Box<dyn Fn(i64) -> f64>),
                (negbinom_interval(mu, r, alpha).unwrap(), Box::new(move |k: i64| if k < 0 { 0.0 } else { negbinom_cdf_sum(k as u64, mu, r) })),
            ] {
                prop_assert_eq!(iv.lower().fract(), 0.0);
                prop_assert_eq!(iv.upper().fract(), 0.0);
                prop_assert!(iv.lower() >= 0.0);
                let mass = cdf(iv.upper() as i64) - cdf(iv.lower() as i64 - 1);
                prop_assert!(mass >= 1.0 - alpha - 1e-9, "mass {} at mu {}", mass, mu);
            }
        }
    }
}
