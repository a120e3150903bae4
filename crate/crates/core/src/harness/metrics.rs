use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dist::MetricsRecord;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 5] = ["t", "grad_norm_sq", "err_norm_sq", "dist_to_saddle", "bits_up"];

/// 17 significant digits, scientific notation, `.` decimal point.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub trait MetricsSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Streams one CSV row per round; an absent `dist_to_saddle` is an empty field.
pub struct CsvMetrics<W: Write> {
    writer: csv::Writer<W>,
    records: Vec<MetricsRecord>,
}

impl<W: Write> CsvMetrics<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(METRICS_HEADER)?;
        Ok(Self { writer, records: Vec::new() })
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MetricsRecord> {
        self.records
    }
}

impl<W: Write> MetricsSink for CsvMetrics<W> {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        self.writer.write_record([
            r.t.to_string(),
            format_float(r.grad_norm_sq),
            format_float(r.err_norm_sq),
            r.dist_to_saddle.map(format_float).unwrap_or_default(),
            r.bits_up.to_string(),
        ])?;
        self.records.push(r.clone());
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Config(format!("unexpected metrics header {header:?}")));
    }
    let bad = |field: &str| Error::Config(format!("bad metrics field `{field}`"));
    reader
        .records()
        .map(|row| {
            let row = row?;
            let float = |i: usize| row[i].parse::<f64>().map_err(|_| bad(&row[i]));
            Ok(MetricsRecord {
                t: row[0].parse().map_err(|_| bad(&row[0]))?,
                grad_norm_sq: float(1)?,
                err_norm_sq: float(2)?,
                dist_to_saddle: if row[3].is_empty() { None } else { Some(float(3)?) },
                bits_up: row[4].parse().map_err(|_| bad(&row[4]))?,
            })
        })
        .collect()
}

/// Statistics recomputable from a metrics file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds_completed: u64,
    pub mean_grad_norm_sq: f64,
    pub final_grad_norm_sq: Option<f64>,
    pub final_dist_to_saddle: Option<f64>,
    pub max_err_norm_sq: f64,
    pub total_bits_up: u64,
}

impl Summary {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let n = records.len();
        let mean = if n == 0 {
            0.0
        } else {
            records.iter().map(|r| r.grad_norm_sq).sum::<f64>() / n as f64
        };
        Self {
            rounds_completed: n as u64,
            mean_grad_norm_sq: mean,
            final_grad_norm_sq: records.last().map(|r| r.grad_norm_sq),
            final_dist_to_saddle: records.last().and_then(|r| r.dist_to_saddle),
            max_err_norm_sq: records.iter().map(|r| r.err_norm_sq).fold(0.0, f64::max),
            total_bits_up: records.iter().map(|r| r.bits_up).sum(),
        }
    }
}
