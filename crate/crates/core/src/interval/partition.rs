use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};

/// How a partition was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionOrigin {
    /// Empirical percentiles of a sample. `collapsed` is set when tied or
    /// boundary quantiles were dropped and fewer than `requested` bins remain.
    Percentiles { requested: usize, collapsed: bool },
    Cutpoints,
}

/// Ordered breakpoints splitting the outcome axis into contiguous bins.
///
/// `k` breakpoints give `k + 1` bins. Bin `0` is `[support_min, b_1)`, interior
/// bins are `[b_{i}, b_{i+1})` and the last bin is `[b_k, +inf)`.
/// `support_min` is `-inf` unless declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    breakpoints: Vec<f64>,
    support_min: f64,
    origin: PartitionOrigin,
}

impl BinPartition {
    /// A single bin covering the whole support.
    pub fn single(support_min: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            support_min,
            origin: PartitionOrigin::Cutpoints,
        }
    }

    /// Bins at the empirical `j / k` quantiles of `y_values`, `j = 1..k-1`.
    ///
    /// Tied quantiles collapse into one breakpoint, and a breakpoint equal to
    /// the sample minimum is dropped (its left bin would hold no data). Either
    /// case sets the `collapsed` flag.
    pub fn from_percentiles(y_values: &[f64], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("k", format!("need at least 2 bins, got {k}")));
        }
        if y_values.is_empty() {
            return Err(Error::DegeneratePartition("no values".into()));
        }
        if y_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegeneratePartition("non-finite value".into()));
        }
        let sorted = sorted_copy(y_values);
        let min = sorted[0];
        if sorted[sorted.len() - 1] == min {
            return Err(Error::DegeneratePartition(
                "fewer than two distinct values".into(),
            ));
        }
        let mut breakpoints: Vec<f64> = Vec::with_capacity(k - 1);
        for j in 1..k {
            let q = quantile_sorted(&sorted, j as f64 / k as f64);
            if q > min && breakpoints.last().is_none_or(|&last| q > last) {
                breakpoints.push(q);
            }
        }
        let collapsed = breakpoints.len() + 1 < k;
        Ok(Self {
            breakpoints,
            support_min: f64::NEG_INFINITY,
            origin: PartitionOrigin::Percentiles {
                requested: k,
                collapsed,
            },
        })
    }

    /// Bins `[support_min, c_1), [c_1, c_2), ..., [c_k, +inf)`.
    pub fn from_cutpoints(cutpoints: &[f64], support_min: f64) -> Result<Self> {
        if cutpoints.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidCutpoints("cutpoints must be finite".into()));
        }
        if let Some(w) = cutpoints.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCutpoints(format!(
                "not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if support_min.is_nan() || support_min == f64::INFINITY {
            return Err(Error::InvalidCutpoints(format!(
                "invalid support minimum {support_min}"
            )));
        }
        if let Some(&first) = cutpoints.first() {
            if support_min >= first {
                return Err(Error::InvalidCutpoints(format!(
                    "support minimum {support_min} must lie below the first cutpoint {first}"
                )));
            }
        }
        Ok(Self {
            breakpoints: cutpoints.to_vec(),
            support_min,
            origin: PartitionOrigin::Cutpoints,
        })
    }

    /// Declares a support minimum below the first breakpoint.
    pub fn with_support_min(mut self, support_min: f64) -> Result<Self> {
        if support_min.is_nan() || support_min == f64::INFINITY {
            return Err(Error::InvalidCutpoints(format!(
                "invalid support minimum {support_min}"
            )));
        }
        if let Some(&first) = self.breakpoints.first() {
            if support_min >= first {
                return Err(Error::InvalidCutpoints(format!(
                    "support minimum {support_min} must lie below the first breakpoint {first}"
                )));
            }
        }
        self.support_min = support_min;
        Ok(self)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn support_min(&self) -> f64 {
        self.support_min
    }

    pub fn n_bins(&self) -> usize {
        self.breakpoints.len() + 1
    }

    pub fn origin(&self) -> &PartitionOrigin {
        &self.origin
    }

    /// True when percentile construction produced fewer bins than requested.
    pub fn collapsed(&self) -> bool {
        matches!(
            self.origin,
            PartitionOrigin::Percentiles {
                collapsed: true,
                ..
            }
        )
    }

    /// Zero-based index of the bin containing `y`.
    pub fn assign_bin(&self, y: f64) -> Result<usize> {
        if y.is_nan() || y < self.support_min {
            return Err(Error::OutOfSupport {
                value: y,
                support_min: self.support_min,
            });
        }
        Ok(self.breakpoints.partition_point(|&b| b <= y))
    }

    /// `(lower, upper)` of bin `bin`; the bin is `[lower, upper)`.
    pub fn bin_bounds(&self, bin: usize) -> Result<(f64, f64)> {
        let n = self.n_bins();
        if bin >= n {
            return Err(Error::BinOutOfRange { bin, n_bins: n });
        }
        let lower = if bin == 0 {
            self.support_min
        } else {
            self.breakpoints[bin - 1]
        };
        let upper = self
            .breakpoints
            .get(bin)
            .copied()
            .unwrap_or(f64::INFINITY);
        Ok((lower, upper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent type-7 quantile: position `1 + (n-1) p` (1-based) with
    /// linear interpolation, written directly from the definition.
    fn oracle_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 1.0 + (v.len() as f64 - 1.0) * p;
        let below = pos.floor();
        let w = pos - below;
        let i = below as usize - 1;
        if i + 1 >= v.len() {
            v[i]
        } else {
            (1.0 - w) * v[i] + w * v[i + 1]
        }
    }

    #[test]
    fn percentiles_of_one_to_hundred() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let expected: Vec<f64> = [0.25, 0.5, 0.75]
            .iter()
            .map(|&p| oracle_quantile(&y, p))
            .collect();
        // frozen from the oracle
        assert_eq!(expected, vec![25.75, 50.5, 75.25]);
        let part = BinPartition::from_percentiles(&y, 4).unwrap();
        assert_eq!(part.breakpoints(), &expected[..]);
        assert_eq!(part.n_bins(), 4);
        assert!(!part.collapsed());
    }

    #[test]
    fn constant_values_are_degenerate() {
        let err = BinPartition::from_percentiles(&[5.0, 5.0, 5.0, 5.0], 2).unwrap_err();
        assert!(matches!(err, Error::DegeneratePartition(_)));
    }

    #[test]
    fn half_zeros_two_bins() {
        let mut y = vec![0.0; 100];
        y.extend((1..=100).map(f64::from));
        let part = BinPartition::from_percentiles(&y, 2).unwrap();
        assert_eq!(part.breakpoints(), &[oracle_quantile(&y, 0.5)]);
        let zeros_in_first = y
            .iter()
            .filter(|&&v| v == 0.0)
            .all(|&v| part.assign_bin(v).unwrap() == 0);
        assert!(zeros_in_first);
        let count_first = y.iter().filter(|&&v| part.assign_bin(v).unwrap() == 0).count();
        assert_eq!(count_first, 100);
    }

    #[test]
    fn tied_quantiles_collapse() {
        let mut y = vec![0.0; 70];
        y.extend((1..=30).map(f64::from));
        let part = BinPartition::from_percentiles(&y, 4).unwrap();
        // q25 and q50 are both the minimum and are dropped
        assert_eq!(part.n_bins(), 2);
        assert!(part.collapsed());
    }

    #[test]
    fn fatality_cutpoints() {
        let part = BinPartition::from_cutpoints(&[1.0, 3.0, 8.0, 21.0, 55.0, 149.0], 0.0).unwrap();
        assert_eq!(part.n_bins(), 7);
        let cases = [
            (0.0, 0),
            (1.0, 1),
            (2.0, 1),
            (3.0, 2),
            (7.0, 2),
            (8.0, 3),
            (20.0, 3),
            (21.0, 4),
            (54.0, 4),
            (55.0, 5),
            (148.0, 5),
            (149.0, 6),
            (1e6, 6),
        ];
        for (y, bin) in cases {
            assert_eq!(part.assign_bin(y).unwrap(), bin, "y = {y}");
        }
        assert_eq!(part.bin_bounds(0).unwrap(), (0.0, 1.0));
        assert_eq!(part.bin_bounds(6).unwrap(), (149.0, f64::INFINITY));
    }

    #[test]
    fn zero_versus_nonzero() {
        let part = BinPartition::from_cutpoints(&[1.0], 0.0).unwrap();
        assert_eq!(part.n_bins(), 2);
        assert_eq!(part.assign_bin(0.0).unwrap(), 0);
        assert_eq!(part.assign_bin(1.0).unwrap(), 1);
    }

    #[test]
    fn unordered_cutpoints_rejected() {
        let err = BinPartition::from_cutpoints(&[3.0, 2.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidCutpoints(_)));
        assert!(BinPartition::from_cutpoints(&[1.0, 1.0], 0.0).is_err());
        assert!(BinPartition::from_cutpoints(&[1.0], 1.0).is_err());
    }

    #[test]
    fn assign_bin_boundaries() {
        let part = BinPartition::from_cutpoints(&[1.0, 3.0], f64::NEG_INFINITY).unwrap();
        assert_eq!(part.assign_bin(1.0).unwrap(), 1);
        assert_eq!(part.assign_bin(0.999).unwrap(), 0);
        assert_eq!(part.assign_bin(1e9).unwrap(), 2);
        let bounded = BinPartition::from_cutpoints(&[1.0, 3.0], 0.0).unwrap();
        assert!(matches!(
            bounded.assign_bin(-0.5),
            Err(Error::OutOfSupport { .. })
        ));
    }

    proptest! {
        #[test]
        fn assign_bin_consistent_with_bounds(
            cuts in prop::collection::btree_set(-50i32..50, 0..6),
            y in -60.0f64..60.0,
        ) {
            let cuts: Vec<f64> = cuts.into_iter().map(f64::from).collect();
            let part = BinPartition::from_cutpoints(&cuts, f64::NEG_INFINITY).unwrap();
            let bin = part.assign_bin(y).unwrap();
            for i in 0..part.n_bins() {
                let (lo, hi) = part.bin_bounds(i).unwrap();
                prop_assert_eq!(lo <= y && y < hi, i == bin);
            }
        }

        #[test]
        fn percentile_bins_are_balanced(
            values in prop::collection::hash_set(-10_000i32..10_000, 8..200),
            k in 2usize..8,
        ) {
            let y: Vec<f64> = values.into_iter().map(f64::from).collect();
            prop_assume!(k <= y.len());
            let part = BinPartition::from_percentiles(&y, k).unwrap();
            prop_assert_eq!(part.n_bins(), k);
            let mut counts = vec![0usize; k];
            for &v in &y {
                counts[part.assign_bin(v).unwrap()] += 1;
            }
            let max = *counts.iter().max().unwrap();
            let min = *counts.iter().min().unwrap();
            prop_assert!(max - min <= 1, "counts {:?}", counts);
        }
    }
}
