//! Experiment reports as CSV or JSON lines.
//!
//! Columns, in order: `experiment, policy, replacement, scaled, ratio, k,
//! trials, metric_name, mean, std, compute_reduction, seed`. Floats are
//! written with 17 significant digits so they parse back bit-exactly; empty
//! CSV fields (JSON `null`) mark values that do not apply.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 12] = [
    "experiment",
    "policy",
    "replacement",
    "scaled",
    "ratio",
    "k",
    "trials",
    "metric_name",
    "mean",
    "std",
    "compute_reduction",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub policy: String,
    pub replacement: bool,
    pub scaled: bool,
    pub ratio: f64,
    pub k: Option<usize>,
    pub trials: usize,
    pub metric_name: String,
    pub mean: f64,
    pub std: f64,
    pub compute_reduction: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    JsonLines,
}

impl ReportFormat {
    /// JSON lines for `.jsonl`/`.json`, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => ReportFormat::JsonLines,
            _ => ReportFormat::Csv,
        }
    }
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

impl ReportRow {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.std.is_nan() || self.std < 0.0 {
            return Err(Error::domain(format!(
                "report row {}/{}: trials {} std {}",
                self.experiment, self.policy, self.trials, self.std
            )));
        }
        Ok(())
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.policy.clone(),
            self.replacement.to_string(),
            self.scaled.to_string(),
            float(self.ratio),
            self.k.map(|k| k.to_string()).unwrap_or_default(),
            self.trials.to_string(),
            self.metric_name.clone(),
            float(self.mean),
            float(self.std),
            self.compute_reduction.map(float).unwrap_or_default(),
            self.seed.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> std::result::Result<Self, String> {
        if rec.len() != COLUMNS.len() {
            return Err(format!("{} fields, expected {}", rec.len(), COLUMNS.len()));
        }
        fn p<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {name} `{s}`"))
        }
        fn opt<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<Option<T>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                p(s, name).map(Some)
            }
        }
        Ok(ReportRow {
            experiment: rec[0].to_string(),
            policy: rec[1].to_string(),
            replacement: p(&rec[2], "replacement")?,
            scaled: p(&rec[3], "scaled")?,
            ratio: p(&rec[4], "ratio")?,
            k: opt(&rec[5], "k")?,
            trials: p(&rec[6], "trials")?,
            metric_name: rec[7].to_string(),
            mean: p(&rec[8], "mean")?,
            std: p(&rec[9], "std")?,
            compute_reduction: opt(&rec[10], "compute_reduction")?,
            seed: p(&rec[11], "seed")?,
        })
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct JsonHeader {
    columns: Vec<String>,
}

fn json_header() -> JsonHeader {
    JsonHeader {
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
    }
}

fn header_line(format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => COLUMNS.join(","),
        ReportFormat::JsonLines => serde_json::to_string(&json_header()).expect("header serializes"),
    }
}

fn row_line(row: &ReportRow, format: ReportFormat) -> Result<String> {
    row.validate()?;
    Ok(match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(row.to_record()).expect("in-memory write");
            let bytes = w.into_inner().expect("in-memory flush");
            String::from_utf8(bytes)
                .expect("utf-8 record")
                .trim_end_matches('\n')
                .to_string()
        }
        ReportFormat::JsonLines => serde_json::to_string(row).expect("row serializes"),
    })
}

/// Appends rows to a report file, writing the header only when the file is
/// new or empty. An existing file must carry the same header.
#[derive(Debug)]
pub struct ReportWriter {
    path: PathBuf,
    format: ReportFormat,
    out: BufWriter<File>,
}

impl ReportWriter {
    pub fn create(path: &Path, format: ReportFormat) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            format,
            out: BufWriter::new(file),
        };
        w.line(&header_line(format))?;
        Ok(w)
    }

    pub fn append(path: &Path, format: ReportFormat) -> Result<Self> {
        let existing = match File::open(path) {
            Ok(f) => {
                let mut first = String::new();
                BufReader::new(f)
                    .read_line(&mut first)
                    .map_err(|e| Error::io(path, e))?;
                Some(first)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path, e)),
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            format,
            out: BufWriter::new(file),
        };
        match existing.as_deref().map(|l| l.trim_end()) {
            None | Some("") => w.line(&header_line(format))?,
            Some(h) if h == header_line(format) => {}
            Some(h) => {
                return Err(Error::Report {
                    path: path.to_path_buf(),
                    message: format!("existing header `{h}` does not match"),
                })
            }
        }
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &ReportRow) -> Result<()> {
        let line = row_line(row, self.format)?;
        self.line(&line)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a fresh report: header, then one record per row.
pub fn write_report(rows: &[ReportRow], path: &Path, format: ReportFormat) -> Result<()> {
    let mut w = ReportWriter::create(path, format)?;
    for row in rows {
        w.write(row)?;
    }
    w.finish()
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Report {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header_line(format) => {}
        Some((_, h)) => return Err(bad(1, format!("unexpected header `{h}`"))),
        None => return Err(bad(1, "missing header".to_string())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = match format {
            ReportFormat::Csv => {
                let mut r = csv::ReaderBuilder::new()
                    .has_headers(false)
                    .from_reader(line.as_bytes());
                let rec = r
                    .records()
                    .next()
                    .ok_or_else(|| bad(i + 1, "empty record".to_string()))?
                    .map_err(|e| bad(i + 1, e.to_string()))?;
                ReportRow::from_record(&rec).map_err(|m| bad(i + 1, m))?
            }
            ReportFormat::JsonLines => serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?,
        };
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: u64) -> ReportRow {
        ReportRow {
            experiment: "synth-matmul".into(),
            policy: "nps-rep-scaled".into(),
            replacement: true,
            scaled: true,
            ratio: 0.1 * i as f64,
            k: Some(10 * i as usize),
            trials: 1000,
            metric_name: "normalized_frobenius".into(),
            mean: 1.0 / 3.0 + i as f64,
            std: std::f64::consts::PI * 1e-7,
            compute_reduction: if i.is_multiple_of(2) {
                None
            } else {
                Some(0.123_456_789_012_345_68)
            },
            seed: 17 ^ i,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        for format in [ReportFormat::Csv, ReportFormat::JsonLines] {
            let p = dir.path().join("r");
            write_report(&[], &p, format).unwrap();
            let text = std::fs::read_to_string(&p).unwrap();
            assert_eq!(text.lines().count(), 1);
            assert!(read_report(&p, format).unwrap().is_empty());
        }
    }

    #[test]
    fn three_rows_four_lines_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (1..=3).map(row).collect();
        for format in [ReportFormat::Csv, ReportFormat::JsonLines] {
            let p = dir.path().join("r");
            write_report(&rows, &p, format).unwrap();
            assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 4);
            let back = read_report(&p, format).unwrap();
            assert_eq!(back, rows);
            for (a, b) in back.iter().zip(&rows) {
                assert_eq!(a.mean.to_bits(), b.mean.to_bits());
                assert_eq!(a.std.to_bits(), b.std.to_bits());
            }
        }
    }

    #[test]
    fn csv_header_and_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report(&[row(1)], &p, ReportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[0], "synth-matmul");
        assert_eq!(fields[5], "10");
        assert_eq!(fields[8], "1.3333333333333333e0");
        assert_eq!(fields[11], "16");
    }

    #[test]
    fn append_keeps_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        for i in 0..3 {
            let mut w = ReportWriter::append(&p, ReportFormat::Csv).unwrap();
            w.write(&row(i)).unwrap();
            w.finish().unwrap();
        }
        let back = read_report(&p, ReportFormat::Csv).unwrap();
        assert_eq!(back, (0..3).map(row).collect::<Vec<_>>());
    }

    #[test]
    fn append_rejects_foreign_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "a,b\n").unwrap();
        assert!(matches!(
            ReportWriter::append(&p, ReportFormat::Csv),
            Err(Error::Report { .. })
        ));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(ReportFormat::from_path(Path::new("x.jsonl")), ReportFormat::JsonLines);
        assert_eq!(ReportFormat::from_path(Path::new("x.csv")), ReportFormat::Csv);
    }

    #[test]
    fn invalid_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = row(1);
        r.trials = 0;
        assert!(write_report(&[r], &dir.path().join("r"), ReportFormat::Csv).is_err());
    }
}
