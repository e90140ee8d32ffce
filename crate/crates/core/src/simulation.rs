//! Data-generating processes and train/calibration/test splitting.
//!
//! Every generator draws from a ChaCha8 stream seeded with a single `u64`, so
//! datasets are bit-identical across runs and platforms. Replicated studies
//! derive one seed per (base seed, replicate, purpose) with [`derive_seed`].

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which independent random stream a derived seed feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeedPurpose {
    Data,
    Split,
    Bootstrap,
}

impl SeedPurpose {
    fn tag(self) -> u64 {
        match self {
            SeedPurpose::Data => 0x6461_7461,
            SeedPurpose::Split => 0x7370_6c74,
            SeedPurpose::Bootstrap => 0x626f_6f74,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `purpose` of replicate `replicate` under `base`.
pub fn derive_seed(base: u64, replicate: u64, purpose: SeedPurpose) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ replicate) ^ purpose.tag())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Unassigned,
    Train,
    Calibration,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Unassigned => "unassigned",
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unassigned" => Ok(Split::Unassigned),
            "train" => Ok(Split::Train),
            "calibration" => Ok(Split::Calibration),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidSplit(format!("unknown split label `{other}`"))),
        }
    }
}

/// Features, outcomes and per-row split labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    y: Vec<f64>,
    splits: Vec<Split>,
    seed: u64,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, y: Vec<f64>, splits: Vec<Split>, seed: u64) -> Result<Self> {
        if features.nrows() != y.len() || splits.len() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} outcomes, {} split labels",
                features.nrows(),
                y.len(),
                splits.len()
            )));
        }
        Ok(Self {
            features,
            y,
            splits,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Seed the rows were generated from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Features and outcomes of the rows labelled `split`, in row order.
    pub fn subset(&self, split: Split) -> (DMatrix<f64>, Vec<f64>) {
        let idx = self.indices(split);
        let x = self.features.select_rows(idx.iter());
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    Ok(())
}

/// `x1, x2 ~ U(0, 1)`, `log y ~ N(x1 + x2, 0.5)`.
pub fn lognormal_dgp(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid sd");
    let mut x = DMatrix::<f64>::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x1: f64 = rng.random();
        let x2: f64 = rng.random();
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        y.push((x1 + x2 + noise.sample(&mut rng)).exp());
    }
    Dataset::new(x, y, vec![Split::Unassigned; n], seed)
}

/// Parameters of the zero-inflated count generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedParams {
    pub zero_prob: f64,
    pub a: f64,
    pub b: f64,
    pub s: f64,
}

impl Default for ZeroInflatedParams {
    fn default() -> Self {
        Self {
            zero_prob: 0.867,
            a: 3.0,
            b: 3.0,
            s: 1.5,
        }
    }
}

/// `y = 0` with probability `zero_prob`, otherwise
/// `max(1, round(exp(N(a x1 + b x2, s))))`, with `x1, x2 ~ U(0, 1)`.
///
/// The non-zero branch is floored at 1 so that the zero fraction is exactly
/// `zero_prob` in expectation. Every row consumes the same four draws.
pub fn zero_inflated_count_dgp(n: usize, params: ZeroInflatedParams, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let ZeroInflatedParams { zero_prob, a, b, s } = params;
    if !(0.0..=1.0).contains(&zero_prob) {
        return Err(Error::param("zero_prob", format!("{zero_prob} is not in [0, 1]")));
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::param("a, b", "coefficients must be finite"));
    }
    let noise = Normal::new(0.0, s)
        .ok()
        .filter(|_| s > 0.0 && s.is_finite())
        .ok_or_else(|| Error::param("s", format!("{s} is not a positive finite sd")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::<f64>::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x1: f64 = rng.random();
        let x2: f64 = rng.random();
        let u: f64 = rng.random();
        let e = noise.sample(&mut rng);
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        y.push(if u < zero_prob {
            0.0
        } else {
            (a * x1 + b * x2 + e).exp().round().max(1.0)
        });
    }
    Dataset::new(x, y, vec![Split::Unassigned; n], seed)
}

/// Exact split sizes `(train, calibration, test)` for `n` rows: calibration and
/// test get `floor(n p)`, train takes the remainder.
pub fn split_counts(n: usize, proportions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, ca, te) = proportions;
    if [tr, ca, te].iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidSplit(format!(
            "proportions must be positive, got ({tr}, {ca}, {te})"
        )));
    }
    if (tr + ca + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "proportions sum to {}, not 1",
            tr + ca + te
        )));
    }
    // the small slack keeps 10 * 0.7 style products from flooring one short
    let floor = |p: f64| (n as f64 * p + 1e-9).floor() as usize;
    let calib = floor(ca);
    let test = floor(te);
    Ok((n - calib - test, calib, test))
}

/// Labels rows by a uniformly random permutation: the first block is train,
/// then calibration, then test.
pub fn split(dataset: Dataset, proportions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let n = dataset.len();
    let (train, calib, _) = split_counts(n, proportions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (pos, &row) in order.iter().enumerate() {
        if pos < train {
            splits[row] = Split::Train;
        } else if pos < train + calib {
            splits[row] = Split::Calibration;
        }
    }
    Ok(Dataset { splits, ..dataset })
}
