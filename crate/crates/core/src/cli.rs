use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use bccp::baselines::DEFAULT_BOOTSTRAP_DRAWS;
use bccp::conformal::default_grid;
use bccp::evaluation::{coverage, run_replications, GroupingSpec, ReplicationConfig, Study};
use bccp::io;
use bccp::methods::{CalibrationInputs, FittedMethod, QuantRegData};
use bccp::models::{ols_fit, round_count_set, OutcomeTransform};
use bccp::simulation::{
    derive_seed, lognormal_dgp, split, zero_inflated_count_dgp, SeedPurpose, Split, ZeroInflatedParams,
};
use bccp::{
    BinSpec, CalibrationSet, EmptyBinPolicy, Error, FlaggedSet, IntervalFlags, IntervalSet, Method,
    NonconformityMeasure,
};

#[derive(Debug, Parser)]
#[command(name = "bccp", version, about = "Bin-conditional conformal prediction intervals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with split labels
    Simulate(SimulateArgs),
    /// Build prediction intervals from calibration and test predictions
    Intervals(IntervalsArgs),
    /// Score an interval file against observed outcomes
    Evaluate(EvaluateArgs),
    /// Run a replicated simulation study and write a coverage report
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Dgp {
    Lognormal,
    Zicount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Analytic,
    Grid,
}

#[derive(Debug, Args)]
pub struct ZeroInflatedArgs {
    /// Probability of a structural zero
    #[arg(long, default_value_t = 0.867)]
    zero_prob: f64,
    /// Coefficient on x1 in the non-zero branch
    #[arg(long, default_value_t = 3.0)]
    zi_a: f64,
    /// Coefficient on x2 in the non-zero branch
    #[arg(long, default_value_t = 3.0)]
    zi_b: f64,
    /// Log-scale noise sd in the non-zero branch
    #[arg(long, default_value_t = 1.5)]
    zi_s: f64,
}

impl ZeroInflatedArgs {
    fn params(&self) -> ZeroInflatedParams {
        ZeroInflatedParams {
            zero_prob: self.zero_prob,
            a: self.zi_a,
            b: self.zi_b,
            s: self.zi_s,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    dgp: Dgp,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train,calibration,test proportions [default: 0.5,0.25,0.25 for
    /// lognormal, 0.7,0.2,0.1 for zicount]
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    zi: ZeroInflatedArgs,
    /// Dataset CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Also fit OLS on the training rows and write calibration.csv and
    /// test.csv (predictions on the log or log1p scale) into this directory
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntervalsArgs {
    /// CSV with row_id,y_true,y_pred
    #[arg(long)]
    calibration: PathBuf,
    /// CSV with row_id,y_pred and optionally y_true
    #[arg(long)]
    test: PathBuf,
    /// scp, bccp-d, bccp-c, bootstrap, bootstrap-log, lognormal, poisson,
    /// negbinom or quantreg
    #[arg(long)]
    method: String,
    /// `percentiles:k` or comma-separated cutpoints (bccp-d and bccp-c only)
    #[arg(long)]
    bins: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Scale of y_pred; the raw prediction is its inverse
    #[arg(long, default_value = "identity")]
    transform: String,
    /// Lowest possible outcome [default: 0 for log and log1p, unbounded otherwise]
    #[arg(long, allow_hyphen_values = true)]
    support_min: Option<f64>,
    /// Round bounds to integers, lower bound at least 0
    #[arg(long)]
    round_counts: bool,
    /// Give bins without calibration records their whole range instead of failing
    #[arg(long)]
    allow_empty_bins: bool,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_DRAWS)]
    bootstrap_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Closed-form intervals or a literal p-value search (conformal methods)
    #[arg(long, value_enum, default_value_t = Solver::Analytic)]
    solver: Solver,
    #[arg(long, default_value_t = 4001)]
    grid_resolution: usize,
    /// Interval CSV to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Interval CSV produced by `intervals`
    #[arg(long)]
    intervals: PathBuf,
    /// Test CSV with a y_true column
    #[arg(long)]
    test: PathBuf,
    /// `quartiles`, `quantiles:k` or comma-separated cutpoints
    #[arg(long, default_value = "quartiles")]
    grouping: String,
    /// Method name written to the report
    #[arg(long, default_value = "intervals")]
    label: String,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-record CSV: row_id,y_true,width,covered,segments
    #[arg(long)]
    widths: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    study: Dgp,
    /// Method to evaluate, repeatable; `name` or `name=bins`
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    /// Bins for bccp methods given without `=bins`
    #[arg(long)]
    bins: Option<String>,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Rows per replicate [default: 10000 lognormal, 50000 zicount]
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    split: Option<String>,
    /// Test-record groups [default: quartiles for lognormal, `1` (zeros vs
    /// non-zeros) for zicount]
    #[arg(long)]
    grouping: Option<String>,
    #[arg(long)]
    round_counts: bool,
    #[arg(long)]
    allow_empty_bins: bool,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_DRAWS)]
    bootstrap_b: usize,
    #[command(flatten)]
    zi: ZeroInflatedArgs,
    /// Report CSV; the resolved configuration goes next to it as
    /// `<out>.config.json`
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Intervals(a) => intervals(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(f))
}

fn parse_split(s: &str) -> Result<(f64, f64, f64)> {
    let parts = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidSplit(format!("`{s}` is not a list of numbers")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::InvalidSplit(format!("expected three proportions, got `{s}`")).into()),
    }
}

fn parse_grouping(s: &str) -> Result<GroupingSpec> {
    let s = s.trim();
    if s == "quartiles" {
        return Ok(GroupingSpec::Quantiles(4));
    }
    let spec = match s.strip_prefix("quantiles:") {
        Some(k) => format!("percentiles:{k}").parse::<BinSpec>()?,
        None => s.parse::<BinSpec>()?,
    };
    Ok(match spec {
        BinSpec::Percentiles(k) => GroupingSpec::Quantiles(k),
        BinSpec::Cutpoints(c) => GroupingSpec::Cutpoints(c),
    })
}

fn study_transform(dgp: Dgp) -> OutcomeTransform {
    match dgp {
        Dgp::Lognormal => OutcomeTransform::Log,
        Dgp::Zicount => OutcomeTransform::Log1p,
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let proportions = match (&a.split, a.dgp) {
        (Some(s), _) => parse_split(s)?,
        (None, Dgp::Lognormal) => (0.5, 0.25, 0.25),
        (None, Dgp::Zicount) => (0.7, 0.2, 0.1),
    };
    let data = match a.dgp {
        Dgp::Lognormal => lognormal_dgp(a.n, a.seed)?,
        Dgp::Zicount => zero_inflated_count_dgp(a.n, a.zi.params(), a.seed)?,
    };
    let data = split(data, proportions, derive_seed(a.seed, 0, SeedPurpose::Split))?;
    let mut w = create(&a.out)?;
    io::write_dataset(&mut w, &data)?;
    w.flush().with_context(|| format!("writing {}", a.out.display()))?;

    if let Some(dir) = a.predictions {
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let transform = study_transform(a.dgp);
        let (train_x, train_y) = data.subset(Split::Train);
        let model = ols_fit(&train_x, &train_y, transform)?;
        let predict = |split: Split| -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
            let idx = data.indices(split);
            let (x, y) = data.subset(split);
            let pred = model.predict_rows(&x)?.into_iter().map(|p| p.transformed).collect();
            Ok((idx.iter().map(|i| i.to_string()).collect(), y, pred))
        };
        let (row_ids, y_true, y_pred) = predict(Split::Calibration)?;
        let mut w = create(&dir.join("calibration.csv"))?;
        io::write_calibration(&mut w, &io::CalibrationFile { row_ids, y_true, y_pred })?;
        w.flush()?;
        let (row_ids, y_true, y_pred) = predict(Split::Test)?;
        let mut w = create(&dir.join("test.csv"))?;
        io::write_test(
            &mut w,
            &io::TestFile {
                row_ids,
                y_pred,
                y_true: Some(y_true),
            },
        )?;
        w.flush()?;
        eprintln!(
            "predictions are on the {} scale; pass --transform {}",
            transform.name(),
            transform.name()
        );
    }
    Ok(())
}

fn intervals(a: IntervalsArgs) -> Result<()> {
    let transform: OutcomeTransform = a.transform.parse()?;
    let bins = a.bins.as_deref().map(str::parse::<BinSpec>).transpose()?;
    let method = Method::from_parts(&a.method, bins)?;
    let cal = io::read_calibration(open(&a.calibration)?)
        .with_context(|| format!("reading {}", a.calibration.display()))?;
    let test = io::read_test(open(&a.test)?).with_context(|| format!("reading {}", a.test.display()))?;
    if cal.y_true.is_empty() {
        return Err(Error::EmptyCalibration.into());
    }
    let support_min = a.support_min.unwrap_or(transform.raw_floor());
    let inputs = CalibrationInputs {
        y_true: &cal.y_true,
        y_pred_scaled: &cal.y_pred,
        transform,
        alpha: a.alpha,
        support_min,
        bootstrap_draws: a.bootstrap_b,
        bootstrap_seed: a.seed,
        empty_bin_policy: if a.allow_empty_bins {
            EmptyBinPolicy::WholeBin
        } else {
            EmptyBinPolicy::Error
        },
    };
    // without covariates, quantile regression uses the prediction as its regressor
    let qr_x = DMatrix::from_column_slice(cal.y_pred.len(), 1, &cal.y_pred);
    let fitted = FittedMethod::fit(
        &method,
        &inputs,
        Some(QuantRegData {
            features: &qr_x,
            y: &cal.y_true,
        }),
    )?
    .with_rounding(a.round_counts);

    let rows: Vec<(String, FlaggedSet)> = match a.solver {
        Solver::Analytic => test
            .row_ids
            .iter()
            .zip(&test.y_pred)
            .map(|(id, &p)| Ok((id.clone(), fitted.predict(p, &[p])?)))
            .collect::<Result<_>>()?,
        Solver::Grid => {
            let calibration = fitted.conformal().ok_or_else(|| {
                Error::param("solver", format!("the grid solver supports conformal methods only, not {method}"))
            })?;
            let raw_cal: Vec<f64> = cal.y_pred.iter().map(|&t| transform.inverse(t).0).collect();
            let set = CalibrationSet::new(&cal.y_true, &raw_cal, NonconformityMeasure::AbsoluteError)?;
            let grid = default_grid(&set, support_min, a.grid_resolution)?;
            test.row_ids
                .iter()
                .zip(&test.y_pred)
                .map(|(id, &p)| {
                    let (raw, inverse_clamped) = transform.inverse(p);
                    let acc = match method {
                        Method::Scp => calibration.scp_grid(raw, &grid)?,
                        _ => calibration.bccp_grid(raw, &grid)?,
                    };
                    let mut flags = IntervalFlags::empty();
                    if inverse_clamped || calibration.clamps(raw) {
                        flags |= IntervalFlags::CLAMPED;
                    }
                    if acc.empty {
                        flags |= IntervalFlags::EMPTY;
                    }
                    let mut set = match (&method, acc.empty) {
                        (Method::BccpC(_), false) => IntervalSet::from(acc.set.hull()?),
                        _ => acc.set,
                    };
                    if a.round_counts {
                        set = round_count_set(&set);
                        flags |= IntervalFlags::ROUNDED;
                    }
                    Ok((id.clone(), FlaggedSet::new(set, flags)))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut w = create(&a.out)?;
    io::write_intervals(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let sets = io::read_intervals(open(&a.intervals)?)
        .with_context(|| format!("reading {}", a.intervals.display()))?;
    let test = io::read_test(open(&a.test)?).with_context(|| format!("reading {}", a.test.display()))?;
    let Some(y_true) = test.y_true else {
        return Err(Error::Csv("test file has no y_true column".into()).into());
    };
    if y_true.is_empty() {
        return Err(Error::Shape("test file has no rows".into()).into());
    }
    let by_id: std::collections::HashMap<&str, &IntervalSet> =
        sets.iter().map(|(id, fs)| (id.as_str(), &fs.set)).collect();
    if by_id.len() != test.row_ids.len() {
        return Err(Error::Shape(format!(
            "{} interval rows but {} test rows",
            by_id.len(),
            test.row_ids.len()
        ))
        .into());
    }
    let ordered = test
        .row_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Shape(format!("row_id `{id}` has no interval")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let grouping = parse_grouping(&a.grouping)?.build(&y_true)?;
    let m = coverage(&ordered, &y_true, Some(&grouping))?;

    let rows: Vec<_> = std::iter::once((bccp::evaluation::AGGREGATE.to_string(), m.aggregate))
        .chain(m.groups)
        .map(|(group, g)| {
            let p = g.coverage();
            bccp::evaluation::CoverageRow {
                method: a.label.clone(),
                group,
                n: g.n,
                coverage: p,
                // a single run: binomial standard error of the coverage
                coverage_se: (p * (1.0 - p) / g.n as f64).sqrt(),
                mean_width: g.mean_width(),
                width_se: f64::NAN,
                inf_width_count: g.inf_count,
                discontiguity_rate: g.discontiguity_rate(),
                replicates: 1,
            }
        })
        .collect();
    let mut w = create(&a.out)?;
    io::write_report(&mut w, &rows)?;
    w.flush()?;

    if let Some(path) = a.widths {
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["row_id", "y_true", "width", "covered", "segments"])?;
        for ((id, set), y) in test.row_ids.iter().zip(&ordered).zip(&y_true) {
            w.write_record([
                id.clone(),
                io::format_f64(*y),
                io::format_f64(set.total_width()),
                u8::from(set.contains(*y)).to_string(),
                set.len().to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let default_bins = a.bins.as_deref().map(str::parse::<BinSpec>).transpose()?;
    let methods = a
        .methods
        .iter()
        .map(|m| match m.split_once('=') {
            Some(_) => Ok(m.parse::<Method>()?),
            None => {
                let needs = matches!(m.as_str(), "bccp-d" | "bccp-c");
                Ok(Method::from_parts(m, if needs { default_bins.clone() } else { None })?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut config = match a.study {
        Dgp::Lognormal => ReplicationConfig::lognormal(methods, a.replications, a.seed),
        Dgp::Zicount => {
            let mut c = ReplicationConfig::zero_inflated(methods, a.replications, a.seed);
            c.study = Study::ZeroInflated(a.zi.params());
            c
        }
    };
    config.alpha = a.alpha;
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(s) = &a.split {
        config.proportions = parse_split(s)?;
    }
    if let Some(g) = &a.grouping {
        config.grouping = parse_grouping(g)?;
    }
    config.round_counts = a.round_counts;
    config.bootstrap_draws = a.bootstrap_b;
    if a.allow_empty_bins {
        config.empty_bin_policy = EmptyBinPolicy::WholeBin;
    }

    let report = run_replications(&config)?;
    let mut w = create(&a.out)?;
    io::write_report(&mut w, &report.rows)?;
    w.flush()?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".config.json");
    let mut w = create(Path::new(&sidecar))?;
    serde_json::to_writer_pretty(&mut w, &config)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
