//! CSV and JSON output, one row per (kernel, backend, working set).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use halo_core::TimingRecord;
use serde::{Deserialize, Serialize};

use crate::harness::BenchReport;

/// JSON Schema of the JSON report.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

pub const CSV_HEADER: [&str; 12] = [
    "kernel",
    "backend",
    "wss_bytes",
    "reps",
    "t1_median_s",
    "t2_median_s",
    "t3_median_s",
    "t4_median_s",
    "baseline_t3_median_s",
    "perf_penalty_pct",
    "portability_score",
    "overhead_ratio_pct",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Row {
    pub kernel: String,
    pub backend: String,
    pub wss_bytes: u64,
    pub reps: usize,
    pub t1_median_s: f64,
    pub t2_median_s: f64,
    pub t3_median_s: f64,
    pub t4_median_s: f64,
    pub baseline_t3_median_s: f64,
    pub perf_penalty_pct: f64,
    pub portability_score: f64,
    pub overhead_ratio_pct: f64,
    pub dims: Vec<u64>,
    pub warmups: usize,
    pub records: Vec<TimingRecord>,
    pub baseline_t3_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub version: u32,
    pub rows: Vec<Row>,
}

impl From<&BenchReport> for Row {
    fn from(r: &BenchReport) -> Row {
        Row {
            kernel: r.kernel.clone(),
            backend: r.backend.clone(),
            wss_bytes: r.wss,
            reps: r.reps,
            t1_median_s: r.median.t1,
            t2_median_s: r.median.t2,
            t3_median_s: r.median.t3,
            t4_median_s: r.median.t4,
            baseline_t3_median_s: r.baseline_t3_median,
            perf_penalty_pct: r.perf_penalty,
            portability_score: r.portability_score,
            overhead_ratio_pct: r.overhead_ratio,
            dims: r.dims.clone(),
            warmups: r.warmups,
            records: r.records.clone(),
            baseline_t3_s: r.baseline_t3.clone(),
        }
    }
}

impl Row {
    fn csv_fields(&self) -> [String; 12] {
        [
            self.kernel.clone(),
            self.backend.clone(),
            self.wss_bytes.to_string(),
            self.reps.to_string(),
            self.t1_median_s.to_string(),
            self.t2_median_s.to_string(),
            self.t3_median_s.to_string(),
            self.t4_median_s.to_string(),
            self.baseline_t3_median_s.to_string(),
            self.perf_penalty_pct.to_string(),
            self.portability_score.to_string(),
            self.overhead_ratio_pct.to_string(),
        ]
    }
}

pub fn write_csv(reports: &[BenchReport], out: impl Write) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(Row::from(r).csv_fields())?;
    }
    w.flush()
}

pub fn document(reports: &[BenchReport]) -> Document {
    Document {
        version: 1,
        rows: reports.iter().map(Row::from).collect(),
    }
}

pub fn write_json(reports: &[BenchReport], mut out: impl Write) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut out, &document(reports))?;
    writeln!(out)
}

/// Writes `reports` to `path` in `format`.
pub fn emit_report(reports: &[BenchReport], format: Format, path: &Path) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(reports, &mut out)?,
        Format::Json => write_json(reports, &mut out)?,
    }
    out.flush()
}
