//! CSV formats for datasets, calibration and test predictions, interval sets
//! and coverage reports.
//!
//! Reals are written in Rust's shortest round-trip form, so parsing a written
//! value gives back the same bits; infinities are the literal tokens `inf` and
//! `-inf`. Interval files are long format, one segment per row, so sets with
//! any number of segments survive a round trip.

use std::collections::HashSet;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::evaluation::CoverageRow;
use crate::flags::{FlaggedSet, IntervalFlags};
use crate::interval::{IntervalSet, PredictionInterval};
use crate::simulation::{Dataset, Split};

pub const CALIBRATION_HEADER: [&str; 3] = ["row_id", "y_true", "y_pred"];
pub const INTERVAL_HEADER: [&str; 5] = ["row_id", "segment_index", "lower", "upper", "flags"];
pub const REPORT_HEADER: [&str; 8] = [
    "method",
    "group",
    "n",
    "coverage",
    "coverage_se",
    "mean_width",
    "inf_width_count",
    "discontiguity_rate",
];

/// Shortest decimal that parses back to `v`; `inf`, `-inf` and `NaN` for
/// non-finite values.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Csv(format!("line {line}: `{field}` in column {column} is not a number")))
}

struct Table {
    columns: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let columns = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let records = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self { columns, records })
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.find(name)
            .ok_or_else(|| Error::Csv(format!("missing column `{name}`")))
    }

    fn line(i: usize) -> u64 {
        i as u64 + 2
    }

    fn strings(&self, col: usize) -> Vec<String> {
        self.records.iter().map(|r| r[col].to_string()).collect()
    }

    fn reals(&self, col: usize) -> Result<Vec<f64>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| parse_f64(&r[col], &self.columns[col], Self::line(i)))
            .collect()
    }
}

/// Held-out outcomes with their predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    pub row_ids: Vec<String>,
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
}

/// Test predictions, with outcomes when known.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFile {
    pub row_ids: Vec<String>,
    pub y_pred: Vec<f64>,
    pub y_true: Option<Vec<f64>>,
}

pub fn read_calibration<R: Read>(reader: R) -> Result<CalibrationFile> {
    let t = Table::read(reader)?;
    let (id, yt, yp) = (t.require("row_id")?, t.require("y_true")?, t.require("y_pred")?);
    Ok(CalibrationFile {
        row_ids: t.strings(id),
        y_true: t.reals(yt)?,
        y_pred: t.reals(yp)?,
    })
}

pub fn write_calibration<W: Write>(writer: W, file: &CalibrationFile) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CALIBRATION_HEADER).map_err(csv_err)?;
    for ((id, yt), yp) in file.row_ids.iter().zip(&file.y_true).zip(&file.y_pred) {
        w.write_record([id.clone(), format_f64(*yt), format_f64(*yp)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// A test file must hold at least one record.
pub fn read_test<R: Read>(reader: R) -> Result<TestFile> {
    let t = Table::read(reader)?;
    let (id, yp) = (t.require("row_id")?, t.require("y_pred")?);
    if t.records.is_empty() {
        return Err(Error::Shape("test file has no records".into()));
    }
    let y_true = t.find("y_true").map(|c| t.reals(c)).transpose()?;
    Ok(TestFile {
        row_ids: t.strings(id),
        y_pred: t.reals(yp)?,
        y_true,
    })
}

pub fn write_test<W: Write>(writer: W, file: &TestFile) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    match &file.y_true {
        Some(_) => w.write_record(["row_id", "y_pred", "y_true"]),
        None => w.write_record(["row_id", "y_pred"]),
    }
    .map_err(csv_err)?;
    for (i, (id, yp)) in file.row_ids.iter().zip(&file.y_pred).enumerate() {
        let mut rec = vec![id.clone(), format_f64(*yp)];
        if let Some(yt) = &file.y_true {
            rec.push(format_f64(yt[i]));
        }
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Writes one row per segment. An empty set is a single row with blank
/// bounds and the `empty` flag.
pub fn write_intervals<W: Write>(writer: W, rows: &[(String, FlaggedSet)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(INTERVAL_HEADER).map_err(csv_err)?;
    for (id, fs) in rows {
        let flags = fs.flags.to_tokens();
        if fs.set.is_empty() {
            let flags = (fs.flags | IntervalFlags::EMPTY).to_tokens();
            w.write_record([id.as_str(), "0", "", "", flags.as_str()])
                .map_err(csv_err)?;
            continue;
        }
        for (k, seg) in fs.set.segments().iter().enumerate() {
            w.write_record([
                id.clone(),
                k.to_string(),
                format_f64(seg.lower()),
                format_f64(seg.upper()),
                flags.clone(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Inverse of [`write_intervals`]. Rows of one `row_id` must be adjacent with
/// `segment_index` counting up from 0.
pub fn read_intervals<R: Read>(reader: R) -> Result<Vec<(String, FlaggedSet)>> {
    let t = Table::read(reader)?;
    let cols: Vec<usize> = INTERVAL_HEADER
        .iter()
        .map(|c| t.require(c))
        .collect::<Result<_>>()?;
    let mut out: Vec<(String, FlaggedSet)> = Vec::new();
    let mut segments: Vec<PredictionInterval> = Vec::new();
    let mut flags = IntervalFlags::empty();
    let mut current: Option<String> = None;
    let mut expected = 0usize;
    let mut seen: HashSet<String> = HashSet::new();

    let finish = |id: Option<String>,
                  segs: &mut Vec<PredictionInterval>,
                  flags: IntervalFlags,
                  out: &mut Vec<(String, FlaggedSet)>| {
        if let Some(id) = id {
            out.push((id, FlaggedSet::new(IntervalSet::union(segs.drain(..)), flags)));
        }
    };

    for (i, r) in t.records.iter().enumerate() {
        let line = Table::line(i);
        let id = r[cols[0]].to_string();
        let index: usize = r[cols[1]]
            .parse()
            .map_err(|_| Error::Csv(format!("line {line}: bad segment_index `{}`", &r[cols[1]])))?;
        let row_flags = IntervalFlags::from_tokens(&r[cols[4]])
            .ok_or_else(|| Error::Csv(format!("line {line}: unknown flag in `{}`", &r[cols[4]])))?;
        if current.as_deref() != Some(id.as_str()) {
            if !seen.insert(id.clone()) {
                return Err(Error::Csv(format!("line {line}: rows for `{id}` are not adjacent")));
            }
            finish(current.take(), &mut segments, flags, &mut out);
            current = Some(id);
            flags = row_flags;
            expected = 0;
        } else if row_flags != flags {
            return Err(Error::Csv(format!("line {line}: flags differ between segments")));
        }
        if index != expected {
            return Err(Error::Csv(format!(
                "line {line}: segment_index {index}, expected {expected}"
            )));
        }
        expected += 1;
        let (lo, hi) = (&r[cols[2]], &r[cols[3]]);
        if lo.is_empty() && hi.is_empty() {
            if !row_flags.contains(IntervalFlags::EMPTY) || index != 0 {
                return Err(Error::Csv(format!("line {line}: blank bounds on a non-empty set")));
            }
            continue;
        }
        let lower = parse_f64(lo, "lower", line)?;
        let upper = parse_f64(hi, "upper", line)?;
        segments.push(PredictionInterval::new(lower, upper)?);
    }
    finish(current, &mut segments, flags, &mut out);
    Ok(out)
}

/// Header `row_id,split,x1..xp,y`.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let p = data.features().ncols();
    let mut header = vec!["row_id".to_string(), "split".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.push("y".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut rec = vec![i.to_string(), data.splits()[i].name().to_string()];
        rec.extend((0..p).map(|j| format_f64(data.features()[(i, j)])));
        rec.push(format_f64(data.y()[i]));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Inverse of [`write_dataset`]; the seed is not stored and comes back as 0.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let t = Table::read(reader)?;
    let split = t.require("split")?;
    let y = t.reals(t.require("y")?)?;
    let mut feature_cols = Vec::new();
    while let Some(c) = t.find(&format!("x{}", feature_cols.len() + 1)) {
        feature_cols.push(c);
    }
    let n = y.len();
    let mut x = DMatrix::<f64>::zeros(n, feature_cols.len());
    for (j, &c) in feature_cols.iter().enumerate() {
        for (i, v) in t.reals(c)?.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let splits = t
        .records
        .iter()
        .map(|r| r[split].parse::<Split>())
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(x, y, splits, 0)
}

pub fn write_report<W: Write>(writer: W, rows: &[CoverageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.group.clone(),
            r.n.to_string(),
            format_f64(r.coverage),
            format_f64(r.coverage_se),
            format_f64(r.mean_width),
            r.inf_width_count.to_string(),
            format_f64(r.discontiguity_rate),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> PredictionInterval {
        PredictionInterval::new(a, b).unwrap()
    }

    fn round_trip(rows: &[(String, FlaggedSet)]) -> Vec<(String, FlaggedSet)> {
        let mut buf = Vec::new();
        write_intervals(&mut buf, rows).unwrap();
        read_intervals(buf.as_slice()).unwrap()
    }

    #[test]
    fn two_segment_set_is_two_rows() {
        let set = IntervalSet::union([iv(0.0, 3.0), iv(8.0, 10.0)]);
        let rows = vec![("7".to_string(), FlaggedSet::new(set, IntervalFlags::empty()))];
        let mut buf = Vec::new();
        write_intervals(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "row_id,segment_index,lower,upper,flags\n7,0,0,3,\n7,1,8,10,\n"
        );
        assert_eq!(round_trip(&rows), rows);
    }

    #[test]
    fn infinities_empty_sets_and_flags_survive() {
        let rows = vec![
            (
                "a".to_string(),
                FlaggedSet::new(iv(0.0, f64::INFINITY), IntervalFlags::CLAMPED | IntervalFlags::ROUNDED),
            ),
            (
                "b".to_string(),
                FlaggedSet::new(IntervalSet::empty(), IntervalFlags::EMPTY),
            ),
            ("c".to_string(), FlaggedSet::new(iv(-0.1, 1e-300), IntervalFlags::CROSSED)),
        ];
        let mut buf = Vec::new();
        write_intervals(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("a,0,0,inf,clamped|rounded"));
        assert_eq!(read_intervals(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn malformed_interval_files() {
        let bad = [
            "row_id,segment_index,lower,upper\n1,0,0,1\n",
            "row_id,segment_index,lower,upper,flags\n1,1,0,1,\n",
            "row_id,segment_index,lower,upper,flags\n1,0,0,1,\n2,0,0,1,\n1,1,3,4,\n",
            "row_id,segment_index,lower,upper,flags\n1,0,2,1,\n",
            "row_id,segment_index,lower,upper,flags\n1,0,0,x,\n",
            "row_id,segment_index,lower,upper,flags\n1,0,0,1,bogus\n",
        ];
        for text in bad {
            assert!(read_intervals(text.as_bytes()).is_err(), "{text}");
        }
    }

    #[test]
    fn calibration_and_test_files() {
        let cal = read_calibration("row_id,y_pred,y_true\nr1,1.5,2\nr2,0,inf\n".as_bytes()).unwrap();
        assert_eq!(cal.y_true, vec![2.0, f64::INFINITY]);
        assert_eq!(cal.y_pred, vec![1.5, 0.0]);
        assert!(matches!(
            read_calibration("row_id,y_true\n1,2\n".as_bytes()),
            Err(Error::Csv(_))
        ));
        let t = read_test("row_id,y_pred\n1,2\n".as_bytes()).unwrap();
        assert!(t.y_true.is_none());
        assert!(matches!(read_test("row_id,y_pred\n".as_bytes()), Err(Error::Shape(_))));
        let mut buf = Vec::new();
        let full = TestFile {
            row_ids: vec!["x".into()],
            y_pred: vec![0.1 + 0.2],
            y_true: Some(vec![3.0]),
        };
        write_test(&mut buf, &full).unwrap();
        assert_eq!(read_test(buf.as_slice()).unwrap(), full);
    }

    #[test]
    fn dataset_round_trip() {
        let d = crate::simulation::lognormal_dgp(50, 1).unwrap();
        let d = crate::simulation::split(d, (0.5, 0.25, 0.25), 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.features(), d.features());
        assert_eq!(back.y(), d.y());
        assert_eq!(back.splits(), d.splits());
    }

    proptest! {
        #[test]
        fn interval_csv_round_trips_exactly(
            sets in prop::collection::vec(
                prop::collection::vec((-1e6f64..1e6, 0.0f64..1e3), 0..5),
                1..20,
            ),
            flag_bits in prop::collection::vec(0u8..32, 20),
        ) {
            let rows: Vec<(String, FlaggedSet)> = sets
                .iter()
                .enumerate()
                .map(|(i, segs)| {
                    let set = IntervalSet::union(segs.iter().map(|&(a, w)| iv(a, a + w)));
                    let mut flags = IntervalFlags::from_bits_truncate(flag_bits[i]);
                    if set.is_empty() {
                        flags |= IntervalFlags::EMPTY;
                    }
                    (format!("r{i}"), FlaggedSet::new(set, flags))
                })
                .collect();
            prop_assert_eq!(round_trip(&rows), rows);
        }
    }
}
