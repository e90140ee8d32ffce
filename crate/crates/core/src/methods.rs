//! The interval methods behind one interface: calibrate on held-out pairs,
//! then produce a flagged interval set per test prediction.
//!
//! Predictions arrive on the model's transformed scale. Conformal methods and
//! the raw bootstrap work on the raw scale after the inverse transform; the
//! log-scale bootstrap and the normal-error model stay on the transformed
//! scale; count models take the raw prediction as their mean.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    BootstrapQuantiles, CountModel, NormalErrorModel, QuantRegModel, QuantRegOptions, ResidualPool,
};
use crate::conformal::{ConformalCalibration, EmptyBinPolicy, NonconformityMeasure};
use crate::error::{Error, Result};
use crate::flags::{FlaggedSet, IntervalFlags};
use crate::interval::{BinPartition, CalibrationSet, IntervalSet};
use crate::models::{round_count_set, OutcomeTransform};

/// How BCCP bins are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinSpec {
    /// `k` bins at the empirical percentiles of the calibration outcomes.
    Percentiles(usize),
    /// Explicit interior cutpoints.
    Cutpoints(Vec<f64>),
}

impl BinSpec {
    pub fn partition(&self, calibration_y: &[f64], support_min: f64) -> Result<BinPartition> {
        match self {
            BinSpec::Percentiles(k) => {
                let p = BinPartition::from_percentiles(calibration_y, *k)?;
                if support_min.is_finite() {
                    p.with_support_min(support_min)
                } else {
                    Ok(p)
                }
            }
            BinSpec::Cutpoints(c) => BinPartition::from_cutpoints(c, support_min),
        }
    }
}

impl fmt::Display for BinSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinSpec::Percentiles(k) => write!(f, "percentiles:{k}"),
            BinSpec::Cutpoints(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl FromStr for BinSpec {
    type Err = Error;

    /// `percentiles:k` or comma-separated cutpoints.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("percentiles:") {
            let k = k
                .trim()
                .parse()
                .map_err(|_| Error::param("bins", format!("bad bin count in `{s}`")))?;
            return Ok(BinSpec::Percentiles(k));
        }
        let cuts = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidCutpoints(format!("`{t}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BinSpec::Cutpoints(cuts))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Scp,
    BccpD(BinSpec),
    BccpC(BinSpec),
    /// Residual bootstrap on the raw scale.
    Bootstrap,
    /// Residual bootstrap on the transformed scale.
    BootstrapLog,
    /// Normal errors on the transformed scale (log-normal for a log model).
    LogNormal,
    Poisson,
    NegBinom,
    QuantReg,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Scp => "scp",
            Method::BccpD(_) => "bccp-d",
            Method::BccpC(_) => "bccp-c",
            Method::Bootstrap => "bootstrap",
            Method::BootstrapLog => "bootstrap-log",
            Method::LogNormal => "lognormal",
            Method::Poisson => "poisson",
            Method::NegBinom => "negbinom",
            Method::QuantReg => "quantreg",
        }
    }

    pub fn bins(&self) -> Option<&BinSpec> {
        match self {
            Method::BccpD(b) | Method::BccpC(b) => Some(b),
            _ => None,
        }
    }

    /// Builds a method from its name and, for BCCP, a bin specification.
    pub fn from_parts(name: &str, bins: Option<BinSpec>) -> Result<Self> {
        let needs_bins = matches!(name, "bccp-d" | "bccp-c");
        match (needs_bins, bins) {
            (true, None) => Err(Error::param("bins", format!("method `{name}` needs --bins"))),
            (false, Some(_)) => Err(Error::param(
                "bins",
                format!("method `{name}` does not take bins"),
            )),
            (true, Some(b)) => Ok(if name == "bccp-d" {
                Method::BccpD(b)
            } else {
                Method::BccpC(b)
            }),
            (false, None) => match name {
                "scp" => Ok(Method::Scp),
                "bootstrap" => Ok(Method::Bootstrap),
                "bootstrap-log" => Ok(Method::BootstrapLog),
                "lognormal" => Ok(Method::LogNormal),
                "poisson" => Ok(Method::Poisson),
                "negbinom" => Ok(Method::NegBinom),
                "quantreg" => Ok(Method::QuantReg),
                other => Err(Error::param("method", format!("unknown method `{other}`"))),
            },
        }
    }
}

/// `name` or `name=bins`, e.g. `bccp-d=percentiles:4` or `bccp-d=1,8,55`.
impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bins() {
            Some(b) => write!(f, "{}={}", self.name(), b),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('=') {
            Some((name, bins)) => Method::from_parts(name.trim(), Some(bins.parse()?)),
            None => Method::from_parts(s.trim(), None),
        }
    }
}

/// Everything a method may calibrate on.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationInputs<'a> {
    /// Observed outcomes, raw scale.
    pub y_true: &'a [f64],
    /// Predictions on the scale of `transform`.
    pub y_pred_scaled: &'a [f64],
    pub transform: OutcomeTransform,
    pub alpha: f64,
    /// Lowest possible raw outcome; `-inf` when unbounded.
    pub support_min: f64,
    pub bootstrap_draws: usize,
    pub bootstrap_seed: u64,
    pub empty_bin_policy: EmptyBinPolicy,
}

impl CalibrationInputs<'_> {
    fn raw_predictions(&self) -> Vec<f64> {
        self.y_pred_scaled
            .iter()
            .map(|&t| self.transform.inverse(t).0)
            .collect()
    }
}

/// Features and outcomes quantile regression is fitted on.
#[derive(Debug, Clone, Copy)]
pub struct QuantRegData<'a> {
    pub features: &'a DMatrix<f64>,
    /// Raw-scale outcomes; fitted on the transformed scale.
    pub y: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Conformal {
        calibration: ConformalCalibration,
        binned: bool,
        contiguous: bool,
    },
    Bootstrap(BootstrapQuantiles),
    Normal(NormalErrorModel),
    Count {
        model: CountModel,
        fallback: bool,
    },
    QuantReg(QuantRegModel),
}

/// A calibrated method ready to produce intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedMethod {
    method: Method,
    alpha: f64,
    transform: OutcomeTransform,
    support_min: f64,
    round_counts: bool,
    inner: Fitted,
}

impl FittedMethod {
    /// Calibrates `method`. Quantile regression needs `quantreg`; it is ignored
    /// by every other method.
    pub fn fit(
        method: &Method,
        inputs: &CalibrationInputs<'_>,
        quantreg: Option<QuantRegData<'_>>,
    ) -> Result<Self> {
        let raw = inputs.raw_predictions();
        let conformal = |bins: Option<&BinSpec>| -> Result<ConformalCalibration> {
            let cal = CalibrationSet::new(inputs.y_true, &raw, NonconformityMeasure::AbsoluteError)?;
            let calibration = match bins {
                None => ConformalCalibration::standard(&cal, inputs.alpha)?,
                Some(spec) => {
                    let partition = spec.partition(inputs.y_true, inputs.support_min)?;
                    ConformalCalibration::binned(&cal, partition, inputs.alpha, inputs.empty_bin_policy)?
                }
            };
            if inputs.support_min.is_finite() && bins.is_none() {
                calibration.with_support_min(inputs.support_min)
            } else {
                Ok(calibration)
            }
        };
        let inner = match method {
            Method::Scp => Fitted::Conformal {
                calibration: conformal(None)?,
                binned: false,
                contiguous: false,
            },
            Method::BccpD(spec) | Method::BccpC(spec) => Fitted::Conformal {
                calibration: conformal(Some(spec))?,
                binned: true,
                contiguous: matches!(method, Method::BccpC(_)),
            },
            Method::Bootstrap => {
                let pool = ResidualPool::from_calibration(inputs.y_true, &raw, OutcomeTransform::Identity)?;
                let q = BootstrapQuantiles::draw(&pool, inputs.alpha, inputs.bootstrap_draws, inputs.bootstrap_seed)?;
                Fitted::Bootstrap(if inputs.support_min.is_finite() {
                    q.with_support_min(inputs.support_min)
                } else {
                    q
                })
            }
            Method::BootstrapLog => {
                if inputs.transform == OutcomeTransform::Identity {
                    return Err(Error::param(
                        "transform",
                        "bootstrap-log needs predictions on a log or log1p scale",
                    ));
                }
                let pool = ResidualPool::from_calibration(inputs.y_true, inputs.y_pred_scaled, inputs.transform)?;
                Fitted::Bootstrap(BootstrapQuantiles::draw(
                    &pool,
                    inputs.alpha,
                    inputs.bootstrap_draws,
                    inputs.bootstrap_seed,
                )?)
            }
            Method::LogNormal => Fitted::Normal(NormalErrorModel::fit(
                inputs.y_true,
                inputs.y_pred_scaled,
                inputs.transform,
                inputs.alpha,
            )?),
            Method::Poisson => Fitted::Count {
                model: CountModel::Poisson,
                fallback: false,
            },
            Method::NegBinom => {
                let (model, fallback) = CountModel::method_of_moments(inputs.y_true, &raw)?;
                Fitted::Count { model, fallback }
            }
            Method::QuantReg => {
                let data = quantreg.ok_or_else(|| {
                    Error::param("quantreg", "quantile regression needs training features")
                })?;
                Fitted::QuantReg(QuantRegModel::fit(
                    data.features,
                    data.y,
                    inputs.alpha,
                    inputs.transform,
                    QuantRegOptions::default(),
                )?)
            }
        };
        Ok(Self {
            method: method.clone(),
            alpha: inputs.alpha,
            transform: inputs.transform,
            support_min: inputs.support_min,
            round_counts: false,
            inner,
        })
    }

    /// Rounds every interval to integer bounds (lower clamped at 0).
    pub fn with_rounding(mut self, round_counts: bool) -> Self {
        self.round_counts = round_counts;
        self
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    /// Calibration used by the conformal methods.
    pub fn conformal(&self) -> Option<&ConformalCalibration> {
        match &self.inner {
            Fitted::Conformal { calibration, .. } => Some(calibration),
            _ => None,
        }
    }

    /// Interval set for one test case. `features` is used by quantile
    /// regression only.
    pub fn predict(&self, y_pred_scaled: f64, features: &[f64]) -> Result<FlaggedSet> {
        let (raw, inverse_clamped) = self.transform.inverse(y_pred_scaled);
        let mut flags = IntervalFlags::empty();
        if inverse_clamped {
            flags |= IntervalFlags::CLAMPED;
        }
        let set: IntervalSet = match &self.inner {
            Fitted::Conformal {
                calibration,
                binned,
                contiguous,
            } => {
                if calibration.clamps(raw) {
                    flags |= IntervalFlags::CLAMPED;
                }
                match (binned, contiguous) {
                    (false, _) => calibration.scp_interval(raw)?.into(),
                    (true, false) => calibration.bccp_discontiguous(raw)?,
                    (true, true) => calibration.bccp_contiguous(raw)?.into(),
                }
            }
            Fitted::Bootstrap(q) => q.interval(y_pred_scaled_for(q, y_pred_scaled, raw))?.into(),
            Fitted::Normal(m) => m.interval(y_pred_scaled)?.into(),
            Fitted::Count { model, fallback } => {
                if *fallback {
                    flags |= IntervalFlags::POISSON_FALLBACK;
                }
                model.interval(raw.max(0.0), self.alpha)?.into()
            }
            Fitted::QuantReg(m) => {
                let (iv, crossed) = m.interval(features)?;
                if crossed {
                    flags |= IntervalFlags::CROSSED;
                }
                let iv = if self.support_min.is_finite() {
                    iv.clip_below(self.support_min)
                } else {
                    iv
                };
                iv.into()
            }
        };
        if self.round_counts {
            flags |= IntervalFlags::ROUNDED;
            return Ok(FlaggedSet::new(round_count_set(&set), flags));
        }
        Ok(FlaggedSet::new(set, flags))
    }
}

/// The raw bootstrap works on raw predictions, the log bootstrap on scaled ones.
fn y_pred_scaled_for(q: &BootstrapQuantiles, scaled: f64, raw: f64) -> f64 {
    if q.scale() == OutcomeTransform::Identity {
        raw
    } else {
        scaled
    }
}

