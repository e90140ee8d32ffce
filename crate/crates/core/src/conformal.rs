//! Inductive conformal prediction: finite-sample quantiles, p-values, standard
//! split-conformal (SCP) intervals and bin-conditional conformal prediction
//! (BCCP) with discontiguous and contiguous combination.
//!
//! With the absolute-error nonconformity score the set of candidate outcomes
//! whose p-value exceeds `alpha` is exactly `[y_hat - q, y_hat + q]`, where `q`
//! is the `ceil((n + 1)(1 - alpha))`-th smallest calibration score. The
//! analytic routines below use that closed form; [`grid_interval`] runs the
//! literal p-value search and is kept as an independent check.
//!
//! BCCP calibrates one quantile per bin of the observed outcome. For a test
//! prediction each bin contributes `[y_hat - q_b, y_hat + q_b]` clipped to the
//! bin, and the contributions are unioned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{BinPartition, CalibrationSet, IntervalSet, PredictionInterval};
use crate::stats::sorted_copy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NonconformityMeasure {
    /// `|y - y_hat|`
    #[default]
    AbsoluteError,
}

impl NonconformityMeasure {
    pub fn score(self, y: f64, y_hat: f64) -> f64 {
        match self {
            NonconformityMeasure::AbsoluteError => (y - y_hat).abs(),
        }
    }
}

/// What to do with a bin that received no calibration records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EmptyBinPolicy {
    #[default]
    Error,
    /// Treat the bin's quantile as infinite: the whole bin is always included.
    WholeBin,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_nan() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::param("alpha", format!("{alpha} is not inside (0, 1)")));
    }
    Ok(())
}

/// Order statistic used for the conformal quantile: `ceil((n + 1)(1 - alpha))`.
///
/// Products within 1e-9 of an integer are taken as that integer so that
/// `alpha` values like 0.1 behave like the exact rationals they stand for.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::param("scores", format!("invalid score {bad}")));
    }
    Ok(())
}

fn quantile_of_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let r = quantile_rank(sorted.len(), alpha);
    if r > sorted.len() {
        f64::INFINITY
    } else {
        sorted[r - 1]
    }
}

/// The `ceil((n + 1)(1 - alpha))`-th smallest score, or `+inf` when that rank
/// exceeds `n`. No interpolation; ties are kept.
pub fn finite_sample_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_scores(scores)?;
    Ok(quantile_of_sorted(&sorted_copy(scores), alpha))
}

/// `(1 + #{s >= candidate}) / (n + 1)`.
pub fn conformal_pvalue(candidate_score: f64, scores: &[f64]) -> Result<f64> {
    check_scores(scores)?;
    let at_least = scores.iter().filter(|&&s| s >= candidate_score).count();
    Ok((1 + at_least) as f64 / (scores.len() + 1) as f64)
}

/// Result of the brute-force p-value search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAcceptance {
    pub set: IntervalSet,
    /// No grid point was accepted.
    pub empty: bool,
}

/// Keeps every grid value whose conformal p-value exceeds `alpha`.
///
/// Runs of consecutive accepted grid points become one closed segment from the
/// first to the last accepted point of the run.
pub fn grid_interval(
    y_hat: f64,
    scores: &[f64],
    alpha: f64,
    measure: NonconformityMeasure,
    grid: &[f64],
) -> Result<GridAcceptance> {
    check_alpha(alpha)?;
    check_scores(scores)?;
    if grid.is_empty() {
        return Err(Error::param("grid", "grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("grid", "grid must be sorted"));
    }
    let accepted = grid
        .iter()
        .map(|&y| conformal_pvalue(measure.score(y, y_hat), scores).map(|p| p > alpha))
        .collect::<Result<Vec<bool>>>()?;
    Ok(runs_to_set(grid, &accepted))
}

fn runs_to_set(grid: &[f64], accepted: &[bool]) -> GridAcceptance {
    let mut segments = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=grid.len() {
        let on = i < grid.len() && accepted[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segments.push(
                    PredictionInterval::new(grid[s], grid[i - 1]).expect("grid is sorted"),
                );
                start = None;
            }
            _ => {}
        }
    }
    let empty = segments.is_empty();
    GridAcceptance {
        set: IntervalSet::union(segments),
        empty,
    }
}

/// `resolution` equally spaced points on `[lower, upper]`.
pub fn linear_grid(lower: f64, upper: f64, resolution: usize) -> Result<Vec<f64>> {
    if resolution < 2 || !lower.is_finite() || !upper.is_finite() || lower >= upper {
        return Err(Error::param(
            "grid",
            format!("cannot build {resolution} points on [{lower}, {upper}]"),
        ));
    }
    let step = (upper - lower) / (resolution - 1) as f64;
    Ok((0..resolution)
        .map(|i| if i + 1 == resolution { upper } else { lower + step * i as f64 })
        .collect())
}

/// Default search grid: from the support minimum (or `min y - 3 max score`
/// when unbounded) to `max y + 3 max score`.
pub fn default_grid(
    calibration: &CalibrationSet,
    support_min: f64,
    resolution: usize,
) -> Result<Vec<f64>> {
    let ys = calibration.y_true();
    let max_score = calibration.scores().into_iter().fold(0.0, f64::max);
    let max_y = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let lower = if support_min.is_finite() {
        support_min
    } else {
        min_y - 3.0 * max_score
    };
    let mut upper = max_y + 3.0 * max_score;
    if upper <= lower {
        upper = lower + 1.0;
    }
    linear_grid(lower, upper, resolution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BinState {
    /// Sorted scores of calibration records whose `y_true` falls in the bin.
    scores: Vec<f64>,
    /// `None` for an empty bin under [`EmptyBinPolicy::WholeBin`].
    quantile: Option<f64>,
}

/// Frozen conformal calibration: global scores for SCP and, when a partition
/// is supplied, per-bin scores and quantiles for BCCP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    alpha: f64,
    measure: NonconformityMeasure,
    support_min: f64,
    scores: Vec<f64>,
    quantile: f64,
    partition: Option<BinPartition>,
    bins: Vec<BinState>,
}

impl ConformalCalibration {
    /// Standard split-conformal calibration over all records.
    pub fn standard(calibration: &CalibrationSet, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let scores = sorted_copy(&calibration.scores());
        check_scores(&scores)?;
        let quantile = quantile_of_sorted(&scores, alpha);
        Ok(Self {
            alpha,
            measure: calibration.measure(),
            support_min: f64::NEG_INFINITY,
            scores,
            quantile,
            partition: None,
            bins: Vec::new(),
        })
    }

    /// Bin-conditional calibration. Records are binned by their observed
    /// outcome; the support minimum is taken from the partition.
    pub fn binned(
        calibration: &CalibrationSet,
        partition: BinPartition,
        alpha: f64,
        policy: EmptyBinPolicy,
    ) -> Result<Self> {
        let mut out = Self::standard(calibration, alpha)?;
        let n_bins = partition.n_bins();
        let binned = calibration.clone().with_partition(&partition)?;
        let grouped = binned
            .binned_scores(n_bins)
            .expect("partition was just applied");
        let mut bins = Vec::with_capacity(n_bins);
        for (b, scores) in grouped.into_iter().enumerate() {
            let scores = sorted_copy(&scores);
            let quantile = if scores.is_empty() {
                match policy {
                    EmptyBinPolicy::Error => return Err(Error::EmptyBin { bin: b }),
                    EmptyBinPolicy::WholeBin => None,
                }
            } else {
                Some(quantile_of_sorted(&scores, alpha))
            };
            bins.push(BinState { scores, quantile });
        }
        out.support_min = partition.support_min();
        out.partition = Some(partition);
        out.bins = bins;
        Ok(out)
    }

    /// Declares a support minimum; predictions below it are clamped and
    /// interval lower endpoints never fall below it.
    pub fn with_support_min(mut self, support_min: f64) -> Result<Self> {
        if support_min.is_nan() || support_min == f64::INFINITY {
            return Err(Error::param("support_min", format!("{support_min}")));
        }
        if let Some(p) = &self.partition {
            if let Some(&first) = p.breakpoints().first() {
                if support_min >= first {
                    return Err(Error::param(
                        "support_min",
                        format!("{support_min} is not below the first breakpoint {first}"),
                    ));
                }
            }
            self.partition = Some(p.clone().with_support_min(support_min)?);
        }
        self.support_min = support_min;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn measure(&self) -> NonconformityMeasure {
        self.measure
    }

    pub fn support_min(&self) -> f64 {
        self.support_min
    }

    /// Sorted global scores.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Global SCP quantile.
    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn partition(&self) -> Option<&BinPartition> {
        self.partition.as_ref()
    }

    /// Per-bin quantile; `None` for an empty bin kept under the whole-bin policy.
    pub fn bin_quantile(&self, bin: usize) -> Result<Option<f64>> {
        Ok(self.bin(bin)?.quantile)
    }

    /// Sorted scores of one bin.
    pub fn bin_scores(&self, bin: usize) -> Result<&[f64]> {
        Ok(&self.bin(bin)?.scores)
    }

    fn bin(&self, bin: usize) -> Result<&BinState> {
        let n_bins = self.bins.len();
        if self.partition.is_none() {
            return Err(Error::param(
                "calibration",
                "bin-conditional interval requested from an unbinned calibration",
            ));
        }
        self.bins.get(bin).ok_or(Error::BinOutOfRange { bin, n_bins })
    }

    fn partition_ref(&self) -> Result<&BinPartition> {
        self.partition.as_ref().ok_or_else(|| {
            Error::param(
                "calibration",
                "bin-conditional interval requested from an unbinned calibration",
            )
        })
    }

    /// True when `y_hat` lies below the support and will be clamped.
    pub fn clamps(&self, y_hat: f64) -> bool {
        y_hat < self.support_min
    }

    fn clamp(&self, y_hat: f64) -> Result<f64> {
        if y_hat.is_nan() {
            return Err(Error::param("y_hat", "prediction is NaN"));
        }
        Ok(y_hat.max(self.support_min))
    }

    /// `[y_hat - q, y_hat + q]`, lower end clipped to the support minimum.
    pub fn scp_interval(&self, y_hat: f64) -> Result<PredictionInterval> {
        let c = self.clamp(y_hat)?;
        let q = self.quantile;
        let lower = if q.is_infinite() { f64::NEG_INFINITY } else { c - q };
        let upper = c + q;
        PredictionInterval::new(lower.max(self.support_min), upper)
    }

    /// `[y_hat - q_b, y_hat + q_b]` intersected with bin `bin`, or `None` when
    /// the intersection is empty. A segment ending at the bin's right edge is
    /// returned closed there; the union with the neighbouring bin decides
    /// membership of the breakpoint.
    pub fn bccp_per_bin_interval(&self, y_hat: f64, bin: usize) -> Result<Option<PredictionInterval>> {
        let state = self.bin(bin)?;
        let (bin_lo, bin_hi) = self.partition_ref()?.bin_bounds(bin)?;
        let c = self.clamp(y_hat)?;
        let q = state.quantile.unwrap_or(f64::INFINITY);
        let (lo, hi) = if q.is_infinite() {
            (bin_lo, bin_hi)
        } else {
            ((c - q).max(bin_lo), (c + q).min(bin_hi))
        };
        if lo > hi || (lo == hi && hi == bin_hi && bin_hi.is_finite()) || lo == f64::INFINITY {
            return Ok(None);
        }
        Ok(Some(PredictionInterval::new(lo, hi)?))
    }

    /// Union of the per-bin intervals (BCCPd). Never empty: the bin holding
    /// the (clamped) prediction always contributes.
    pub fn bccp_discontiguous(&self, y_hat: f64) -> Result<IntervalSet> {
        let n_bins = self.partition_ref()?.n_bins();
        let mut parts = Vec::with_capacity(n_bins);
        for b in 0..n_bins {
            if let Some(iv) = self.bccp_per_bin_interval(y_hat, b)? {
                parts.push(iv);
            }
        }
        let set = IntervalSet::union(parts);
        debug_assert!(!set.is_empty());
        Ok(set)
    }

    /// Hull of the BCCPd set (BCCPc).
    pub fn bccp_contiguous(&self, y_hat: f64) -> Result<PredictionInterval> {
        self.bccp_discontiguous(y_hat)?.hull()
    }

    /// SCP by literal p-value search over `grid`.
    pub fn scp_grid(&self, y_hat: f64, grid: &[f64]) -> Result<GridAcceptance> {
        let c = self.clamp(y_hat)?;
        let grid: Vec<f64> = grid.iter().copied().filter(|&y| y >= self.support_min).collect();
        if grid.is_empty() {
            return Err(Error::param("grid", "no grid point inside the support"));
        }
        grid_interval(c, &self.scores, self.alpha, self.measure, &grid)
    }

    /// BCCPd by literal p-value search, bin by bin, over the grid points
    /// falling in each bin.
    pub fn bccp_grid(&self, y_hat: f64, grid: &[f64]) -> Result<GridAcceptance> {
        let partition = self.partition_ref()?;
        let c = self.clamp(y_hat)?;
        let mut segments = Vec::new();
        for (b, state) in self.bins.iter().enumerate() {
            let (lo, hi) = partition.bin_bounds(b)?;
            let in_bin: Vec<f64> = grid.iter().copied().filter(|&y| lo <= y && y < hi).collect();
            if in_bin.is_empty() {
                continue;
            }
            let acc = if state.scores.is_empty() {
                runs_to_set(&in_bin, &vec![true; in_bin.len()])
            } else {
                grid_interval(c, &state.scores, self.alpha, self.measure, &in_bin)?
            };
            segments.extend_from_slice(acc.set.segments());
        }
        let empty = segments.is_empty();
        Ok(GridAcceptance {
            set: IntervalSet::union(segments),
            empty,
        })
    }
}
