//! Coverage, width and discontiguity metrics, and the replication harness.
//!
//! Test records are grouped by their observed outcome, either at empirical
//! quantiles of the test outcomes or at fixed cutpoints. Each replicate draws
//! fresh data, refits the point model, calibrates every method and scores the
//! test split; replicates run in parallel on derived seeds and are combined in
//! index order, so a report depends only on its configuration.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::EmptyBinPolicy;
use crate::error::{Error, Result};
use crate::interval::{BinPartition, IntervalSet};
use crate::methods::{CalibrationInputs, FittedMethod, Method, QuantRegData};
use crate::models::{ols_fit, OutcomeTransform};
use crate::simulation::{
    derive_seed, lognormal_dgp, split, zero_inflated_count_dgp, Dataset, SeedPurpose, Split,
    ZeroInflatedParams,
};
use crate::stats::{mean, standard_error};

/// Label of the all-records group.
pub const AGGREGATE: &str = "all";

/// Groups of the outcome axis used for conditional metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    partition: BinPartition,
    labels: Vec<String>,
}

impl Grouping {
    /// `k` groups at the empirical quantiles of `y`, labelled `Q1..Qk`. Tied
    /// quantiles merge groups, so fewer than `k` may come back.
    pub fn quantiles(y: &[f64], k: usize) -> Result<Self> {
        let partition = BinPartition::from_percentiles(y, k)?;
        let labels = (1..=partition.n_bins()).map(|i| format!("Q{i}")).collect();
        Ok(Self { partition, labels })
    }

    /// Groups split at `cutpoints`, labelled by their range, e.g. `y<1`,
    /// `1<=y<8`, `y>=55`.
    pub fn cutpoints(cutpoints: &[f64]) -> Result<Self> {
        let partition = BinPartition::from_cutpoints(cutpoints, f64::NEG_INFINITY)?;
        let k = cutpoints.len();
        let labels = (0..=k)
            .map(|i| match (i, k) {
                (_, 0) => AGGREGATE.to_string(),
                (0, _) => format!("y<{}", cutpoints[0]),
                (i, k) if i == k => format!("y>={}", cutpoints[k - 1]),
                (i, _) => format!("{}<=y<{}", cutpoints[i - 1], cutpoints[i]),
            })
            .collect();
        Ok(Self { partition, labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn group_of(&self, y: f64) -> Result<usize> {
        self.partition.assign_bin(y)
    }
}

/// How a report groups test records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroupingSpec {
    /// Empirical quantiles of the test outcomes, recomputed per replicate.
    Quantiles(usize),
    Cutpoints(Vec<f64>),
}

impl GroupingSpec {
    pub fn build(&self, y: &[f64]) -> Result<Grouping> {
        match self {
            GroupingSpec::Quantiles(k) => Grouping::quantiles(y, *k),
            GroupingSpec::Cutpoints(c) => Grouping::cutpoints(c),
        }
    }
}

/// Additive tallies for one group of test records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub covered: usize,
    /// Sum of finite total widths.
    pub width_sum: f64,
    pub finite_count: usize,
    /// Sets with infinite total width, kept out of the mean width.
    pub inf_count: usize,
    /// Sets with more than one segment.
    pub discontiguous: usize,
}

impl GroupMetrics {
    pub fn add(&mut self, set: &IntervalSet, y: f64) {
        self.n += 1;
        self.covered += usize::from(set.contains(y));
        let w = set.total_width();
        if w.is_finite() {
            self.width_sum += w;
            self.finite_count += 1;
        } else {
            self.inf_count += 1;
        }
        self.discontiguous += usize::from(set.len() > 1);
    }

    pub fn merge(&mut self, other: &GroupMetrics) {
        self.n += other.n;
        self.covered += other.covered;
        self.width_sum += other.width_sum;
        self.finite_count += other.finite_count;
        self.inf_count += other.inf_count;
        self.discontiguous += other.discontiguous;
    }

    /// Fraction covered; NaN for an empty group.
    pub fn coverage(&self) -> f64 {
        ratio(self.covered as f64, self.n)
    }

    /// Mean of the finite widths; NaN when there are none.
    pub fn mean_width(&self) -> f64 {
        ratio(self.width_sum, self.finite_count)
    }

    pub fn discontiguity_rate(&self) -> f64 {
        ratio(self.discontiguous as f64, self.n)
    }
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num / den as f64
    }
}

/// Metrics for all records plus one entry per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMetrics {
    pub aggregate: GroupMetrics,
    pub groups: Vec<(String, GroupMetrics)>,
}

/// Tallies `sets` against `y_true`, grouping record `i` by `keys[i]`.
pub fn evaluate_by(
    sets: &[IntervalSet],
    y_true: &[f64],
    keys: &[f64],
    grouping: Option<&Grouping>,
) -> Result<GroupedMetrics> {
    if sets.len() != y_true.len() || keys.len() != y_true.len() {
        return Err(Error::Shape(format!(
            "{} interval sets, {} outcomes, {} grouping keys",
            sets.len(),
            y_true.len(),
            keys.len()
        )));
    }
    let mut aggregate = GroupMetrics::default();
    let mut groups: Vec<(String, GroupMetrics)> = grouping
        .map(|g| g.labels().iter().map(|l| (l.clone(), GroupMetrics::default())).collect())
        .unwrap_or_default();
    for ((set, &y), &key) in sets.iter().zip(y_true).zip(keys) {
        aggregate.add(set, y);
        if let Some(g) = grouping {
            groups[g.group_of(key)?].1.add(set, y);
        }
    }
    Ok(GroupedMetrics { aggregate, groups })
}

/// Coverage of `sets`, grouped by the observed outcome.
pub fn coverage(sets: &[IntervalSet], y_true: &[f64], grouping: Option<&Grouping>) -> Result<GroupedMetrics> {
    evaluate_by(sets, y_true, y_true, grouping)
}

/// Mean finite width per group of `keys` (observed or predicted values), with
/// the count of infinite-width sets.
pub fn mean_width(sets: &[IntervalSet], keys: &[f64], grouping: &Grouping) -> Result<Vec<(String, f64, usize)>> {
    // coverage is meaningless here; the keys stand in for the outcomes
    let m = evaluate_by(sets, keys, keys, Some(grouping))?;
    Ok(m.groups
        .into_iter()
        .map(|(label, g)| (label, g.mean_width(), g.inf_count))
        .collect())
}

/// Which data-generating process a replication study draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Study {
    /// Log-normal outcome, OLS on `log y`.
    LogNormal,
    /// Zero-inflated counts, OLS on `log1p y`.
    ZeroInflated(ZeroInflatedParams),
}

impl Study {
    pub fn transform(&self) -> OutcomeTransform {
        match self {
            Study::LogNormal => OutcomeTransform::Log,
            Study::ZeroInflated(_) => OutcomeTransform::Log1p,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            Study::LogNormal => lognormal_dgp(n, seed),
            Study::ZeroInflated(p) => zero_inflated_count_dgp(n, *p, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub study: Study,
    pub n: usize,
    pub proportions: (f64, f64, f64),
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub bootstrap_draws: usize,
    pub round_counts: bool,
    pub grouping: GroupingSpec,
    pub empty_bin_policy: EmptyBinPolicy,
}

impl ReplicationConfig {
    /// Log-normal study: 10,000 rows split 5,000/2,500/2,500, grouped by test
    /// quartiles.
    pub fn lognormal(methods: Vec<Method>, replications: usize, base_seed: u64) -> Self {
        Self {
            study: Study::LogNormal,
            n: 10_000,
            proportions: (0.5, 0.25, 0.25),
            methods,
            alpha: 0.1,
            replications,
            base_seed,
            bootstrap_draws: crate::baselines::DEFAULT_BOOTSTRAP_DRAWS,
            round_counts: false,
            grouping: GroupingSpec::Quantiles(4),
            empty_bin_policy: EmptyBinPolicy::Error,
        }
    }

    /// Zero-inflated count study: 50,000 rows split 70/20/10, grouped into
    /// zeros and non-zeros.
    pub fn zero_inflated(methods: Vec<Method>, replications: usize, base_seed: u64) -> Self {
        Self {
            study: Study::ZeroInflated(ZeroInflatedParams::default()),
            n: 50_000,
            proportions: (0.7, 0.2, 0.1),
            grouping: GroupingSpec::Cutpoints(vec![1.0]),
            ..Self::lognormal(methods, replications, base_seed)
        }
    }

    fn validate(&self) -> Result<()> {
        crate::conformal::check_alpha(self.alpha)?;
        if self.replications == 0 {
            return Err(Error::param("replications", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("methods", "no methods requested"));
        }
        crate::simulation::split_counts(self.n, self.proportions)?;
        Ok(())
    }
}

/// One replicate's metrics, one entry per configured method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub methods: Vec<GroupedMetrics>,
}

/// One line of a coverage report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: String,
    pub group: String,
    /// Test records pooled over replicates.
    pub n: usize,
    /// Pooled coverage: covered records over all records in the group.
    pub coverage: f64,
    /// Standard deviation of per-replicate coverage over `sqrt(R)`.
    pub coverage_se: f64,
    pub mean_width: f64,
    /// Standard deviation of per-replicate mean width over `sqrt(R)`.
    pub width_se: f64,
    pub inf_width_count: usize,
    pub discontiguity_rate: f64,
    /// Replicates in which the group held at least one record.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: ReplicationConfig,
    pub rows: Vec<CoverageRow>,
    pub replicates: Vec<ReplicateOutcome>,
}

impl CoverageReport {
    pub fn row(&self, method: &Method, group: &str) -> Option<&CoverageRow> {
        let name = method.to_string();
        self.rows.iter().find(|r| r.method == name && r.group == group)
    }
}

/// Fits, calibrates and scores every configured method on one dataset that
/// already carries split labels.
pub fn evaluate_dataset(
    dataset: &Dataset,
    config: &ReplicationConfig,
    bootstrap_seed: u64,
) -> Result<Vec<GroupedMetrics>> {
    let transform = config.study.transform();
    let (train_x, train_y) = dataset.subset(Split::Train);
    let (cal_x, cal_y) = dataset.subset(Split::Calibration);
    let (test_x, test_y) = dataset.subset(Split::Test);
    let model = ols_fit(&train_x, &train_y, transform)?;
    let scaled = |x: &DMatrix<f64>| -> Result<Vec<f64>> {
        Ok(model.predict_rows(x)?.into_iter().map(|p| p.transformed).collect())
    };
    let cal_pred = scaled(&cal_x)?;
    let test_pred = scaled(&test_x)?;
    let inputs = CalibrationInputs {
        y_true: &cal_y,
        y_pred_scaled: &cal_pred,
        transform,
        alpha: config.alpha,
        support_min: 0.0,
        bootstrap_draws: config.bootstrap_draws,
        bootstrap_seed,
        empty_bin_policy: config.empty_bin_policy,
    };
    let grouping = config.grouping.build(&test_y)?;
    let quantreg = QuantRegData {
        features: &train_x,
        y: &train_y,
    };
    config
        .methods
        .iter()
        .map(|method| {
            let fitted = FittedMethod::fit(method, &inputs, Some(quantreg))?
                .with_rounding(config.round_counts);
            let mut row = vec![0.0; test_x.ncols()];
            let sets = (0..test_y.len())
                .map(|i| {
                    row.iter_mut()
                        .zip(test_x.row(i).iter())
                        .for_each(|(r, v)| *r = *v);
                    fitted.predict(test_pred[i], &row).map(|f| f.set)
                })
                .collect::<Result<Vec<_>>>()?;
            coverage(&sets, &test_y, Some(&grouping))
        })
        .collect()
}

fn run_replicate(config: &ReplicationConfig, index: usize) -> Result<ReplicateOutcome> {
    let r = index as u64;
    let data = config
        .study
        .generate(config.n, derive_seed(config.base_seed, r, SeedPurpose::Data))?;
    let data = split(
        data,
        config.proportions,
        derive_seed(config.base_seed, r, SeedPurpose::Split),
    )?;
    let methods = evaluate_dataset(
        &data,
        config,
        derive_seed(config.base_seed, r, SeedPurpose::Bootstrap),
    )?;
    Ok(ReplicateOutcome { index, methods })
}

/// Runs `config.replications` independent replicates in parallel and
/// summarises them. The first failing replicate (by index) aborts the run.
pub fn run_replications(config: &ReplicationConfig) -> Result<CoverageReport> {
    config.validate()?;
    let results: Vec<Result<ReplicateOutcome>> = (0..config.replications)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect();
    let replicates = results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = summarise(&config.methods, &replicates);
    Ok(CoverageReport {
        config: config.clone(),
        rows,
        replicates,
    })
}

/// Pools tallies across replicates and attaches Monte Carlo standard errors.
pub fn summarise(methods: &[Method], replicates: &[ReplicateOutcome]) -> Vec<CoverageRow> {
    let mut rows = Vec::new();
    for (m, method) in methods.iter().enumerate() {
        // group labels in first-seen order, aggregate first
        let mut labels = vec![AGGREGATE.to_string()];
        for rep in replicates {
            for (label, _) in &rep.methods[m].groups {
                if !labels.contains(label) {
                    labels.push(label.clone());
                }
            }
        }
        for label in labels {
            let per_rep: Vec<GroupMetrics> = replicates
                .iter()
                .filter_map(|rep| {
                    let g = &rep.methods[m];
                    if label == AGGREGATE {
                        Some(g.aggregate)
                    } else {
                        g.groups.iter().find(|(l, _)| *l == label).map(|(_, x)| *x)
                    }
                })
                .filter(|g| g.n > 0)
                .collect();
            let mut pooled = GroupMetrics::default();
            per_rep.iter().for_each(|g| pooled.merge(g));
            let cov: Vec<f64> = per_rep.iter().map(GroupMetrics::coverage).collect();
            let widths: Vec<f64> = per_rep
                .iter()
                .map(GroupMetrics::mean_width)
                .filter(|w| w.is_finite())
                .collect();
            rows.push(CoverageRow {
                method: method.to_string(),
                group: label,
                n: pooled.n,
                coverage: pooled.coverage(),
                coverage_se: standard_error(&cov),
                mean_width: pooled.mean_width(),
                width_se: standard_error(&widths),
                inf_width_count: pooled.inf_count,
                discontiguity_rate: pooled.discontiguity_rate(),
                replicates: per_rep.len(),
            });
        }
    }
    rows
}

/// Per-replicate values of `metric` for `method`'s `group`, in replicate order.
pub fn per_replicate(
    report: &CoverageReport,
    method: &Method,
    group: &str,
    metric: impl Fn(&GroupMetrics) -> f64,
) -> Vec<f64> {
    let Some(m) = report.config.methods.iter().position(|x| x == method) else {
        return Vec::new();
    };
    report
        .replicates
        .iter()
        .filter_map(|rep| {
            let g = &rep.methods[m];
            if group == AGGREGATE {
                Some(metric(&g.aggregate))
            } else {
                g.groups.iter().find(|(l, _)| l == group).map(|(_, x)| metric(x))
            }
        })
        .collect()
}

/// Mean and standard error of a per-replicate series.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    (mean(values), standard_error(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::PredictionInterval;
    use crate::methods::BinSpec;
    use proptest::prelude::*;

    fn set(segs: &[(f64, f64)]) -> IntervalSet {
        IntervalSet::union(segs.iter().map(|&(a, b)| PredictionInterval::new(a, b).unwrap()))
    }

    #[test]
    fn everything_covers_everything() {
        let y = [0.0, 1.0, 5.0, 100.0];
        let sets = vec![IntervalSet::from(PredictionInterval::everything()); 4];
        let g = Grouping::quantiles(&y, 2).unwrap();
        let m = coverage(&sets, &y, Some(&g)).unwrap();
        assert_eq!(m.aggregate.coverage(), 1.0);
        assert!(m.groups.iter().all(|(_, x)| x.coverage() == 1.0));
        assert_eq!(m.aggregate.inf_count, 4);
        assert!(m.aggregate.mean_width().is_nan());
    }

    #[test]
    fn widths() {
        let y = [1.0, 2.0];
        let zero = vec![set(&[(1.0, 1.0)]), set(&[(2.0, 2.0)])];
        assert_eq!(coverage(&zero, &y, None).unwrap().aggregate.mean_width(), 0.0);
        let ten = vec![set(&[(0.0, 10.0)])];
        let g = Grouping::cutpoints(&[5.0]).unwrap();
        let w = mean_width(&ten, &[3.0], &g).unwrap();
        assert_eq!(w[0], ("y<5".to_string(), 10.0, 0));
        assert!(w[1].1.is_nan());
    }

    #[test]
    fn discontiguity_and_shape() {
        let sets = vec![set(&[(0.0, 1.0), (2.0, 3.0)]), set(&[(0.0, 3.0)])];
        let m = coverage(&sets, &[1.5, 1.5], None).unwrap();
        assert_eq!(m.aggregate.discontiguity_rate(), 0.5);
        assert_eq!(m.aggregate.coverage(), 0.5);
        assert!(matches!(coverage(&sets, &[1.0], None), Err(Error::Shape(_))));
    }

    #[test]
    fn cutpoint_labels() {
        let g = Grouping::cutpoints(&[1.0, 8.0, 55.0]).unwrap();
        assert_eq!(g.labels(), ["y<1", "1<=y<8", "8<=y<55", "y>=55"]);
        assert_eq!(g.group_of(0.0).unwrap(), 0);
        assert_eq!(g.group_of(8.0).unwrap(), 2);
    }

    #[test]
    fn summary_pools_and_reports_se() {
        let m = |n, covered| GroupMetrics {
            n,
            covered,
            width_sum: n as f64,
            finite_count: n,
            ..Default::default()
        };
        let reps: Vec<ReplicateOutcome> = [(10, 9), (10, 7), (20, 20)]
            .iter()
            .enumerate()
            .map(|(index, &(n, c))| ReplicateOutcome {
                index,
                methods: vec![GroupedMetrics {
                    aggregate: m(n, c),
                    groups: vec![],
                }],
            })
            .collect();
        let rows = summarise(&[Method::Scp], &reps);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.n, 40);
        assert_eq!(r.coverage, 36.0 / 40.0);
        // per-replicate coverages 0.9, 0.7, 1.0
        let v: [f64; 3] = [0.9, 0.7, 1.0];
        let mu = v.iter().sum::<f64>() / 3.0;
        let sd = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((r.coverage_se - sd / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.mean_width, 1.0);
    }

    #[test]
    fn replications_are_deterministic() {
        let mut cfg = ReplicationConfig::lognormal(
            vec![Method::Scp, Method::BccpD(BinSpec::Percentiles(4)), Method::Bootstrap],
            2,
            17,
        );
        cfg.n = 800;
        let a = run_replications(&cfg).unwrap();
        let b = run_replications(&cfg).unwrap();
        assert_eq!(a, b);
        let scp = a.row(&Method::Scp, AGGREGATE).unwrap();
        assert_eq!(scp.n, 400);
        assert!(scp.coverage > 0.7);
    }

    #[test]
    fn replicate_failure_names_the_index() {
        let mut cfg = ReplicationConfig::zero_inflated(
            vec![Method::BccpD(BinSpec::Cutpoints(vec![1.0, 1e9]))],
            1,
            3,
        );
        cfg.n = 500;
        match run_replications(&cfg) {
            Err(Error::Replicate { index: 0, source }) => {
                assert!(matches!(*source, Error::EmptyBin { bin: 2 }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_weighted_mean_and_order_free(
            data in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.0f64..3.0), 2..60),
            shift in 0usize..60,
        ) {
            let sets: Vec<IntervalSet> = data.iter().map(|&(_, c, h)| set(&[(c - h, c + h)])).collect();
            let y: Vec<f64> = data.iter().map(|d| d.0).collect();
            let g = Grouping::cutpoints(&[2.5, 5.0, 7.5]).unwrap();
            let m = coverage(&sets, &y, Some(&g)).unwrap();
            let weighted: usize = m.groups.iter().map(|(_, x)| x.covered).sum();
            let total: usize = m.groups.iter().map(|(_, x)| x.n).sum();
            prop_assert_eq!(total, m.aggregate.n);
            prop_assert_eq!(weighted, m.aggregate.covered);
            let k = shift % sets.len();
            let mut s2 = sets.clone();
            let mut y2 = y.clone();
            s2.rotate_left(k);
            y2.rotate_left(k);
            let m2 = coverage(&s2, &y2, Some(&g)).unwrap();
            for (a, b) in m.groups.iter().zip(&m2.groups) {
                prop_assert_eq!(a.1.n, b.1.n);
                prop_assert_eq!(a.1.covered, b.1.covered);
                prop_assert!((a.1.width_sum - b.1.width_sum).abs() < 1e-9);
            }
        }
    }
}
