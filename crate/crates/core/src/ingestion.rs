//! Preprocessing of real measurement data: harmonizing two instruments that
//! measure the same quantity, and averaging transformed replicates.

use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::stats::{mean, sample_variance};
use crate::{Error, Result};

/// Two instruments on the same units: `W1 = X + U1`, `W2 = mu + sigma (X + U2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedInstrumentData {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedEstimate {
    pub w: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    /// Error variance of a single harmonized measurement.
    pub error_variance_single: f64,
    /// Error variance of the averaged series.
    pub error_variance: f64,
    pub signal_variance: f64,
    pub nsr: f64,
    pub rows: usize,
}

pub fn harmonize_pairs(data: &PairedInstrumentData) -> Result<PairedEstimate> {
    let n = data.w1.len();
    if n != data.w2.len() {
        return Err(Error::InvalidParameter("instrument columns differ in length".into()));
    }
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let (s1, s2) = (sample_variance(&data.w1).sqrt(), sample_variance(&data.w2).sqrt());
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::Estimation("an instrument column has zero variance".into()));
    }
    let sigma = s2 / s1;
    let mu = mean(&data.w2) - sigma * mean(&data.w1);
    let back: Vec<f64> = data.w2.iter().map(|v| (v - mu) / sigma).collect();
    let u2 = data
        .w1
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / (2.0 * n as f64);
    let w: Vec<f64> = data.w1.iter().zip(&back).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    let error_variance = 0.5 * u2;
    let signal_variance = sample_variance(&w) - error_variance;
    Ok(PairedEstimate {
        nsr: error_variance / signal_variance,
        w,
        mu,
        sigma,
        error_variance_single: u2,
        error_variance,
        signal_variance,
        rows: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub shift: f64,
    pub log: bool,
}

impl Default for Transform {
    fn default() -> Self {
        Transform {
            shift: 50.0,
            log: true,
        }
    }
}

impl Transform {
    fn apply(&self, p: f64) -> Option<f64> {
        let v = p - self.shift;
        if !p.is_finite() {
            None
        } else if self.log {
            (v > 0.0).then(|| v.ln())
        } else {
            Some(v)
        }
    }
}

/// Replicate measurements per subject: two columns (one per exam) or four
/// (two readings in each of two exams).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateData {
    pub columns: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateEstimate {
    pub w: Vec<f64>,
    pub sigma_x: f64,
    /// Error standard deviation of the averaged series.
    pub sigma_u: f64,
    /// Error standard deviation of a single transformed reading, from
    /// within-exam differences; four-column input only.
    pub within_exam_sigma: Option<f64>,
    pub rows: usize,
    pub rejected: usize,
}

pub fn replicate_average(data: &ReplicateData, transform: &Transform) -> Result<ReplicateEstimate> {
    let k = data.columns.len();
    if k != 2 && k != 4 {
        return Err(Error::Config(format!(
            "replicate data needs 2 or 4 columns, got {k}"
        )));
    }
    let n = data.columns[0].len();
    if data.columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidParameter("replicate columns differ in length".into()));
    }
    let mut exams = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut within = Vec::new();
    let mut rejected = 0;
    for i in 0..n {
        let row: Vec<f64> = data.columns.iter().map(|c| c[i]).collect();
        let (p1, p2) = if k == 4 {
            (0.5 * (row[0] + row[1]), 0.5 * (row[2] + row[3]))
        } else {
            (row[0], row[1])
        };
        match (transform.apply(p1), transform.apply(p2)) {
            (Some(a), Some(b)) => {
                if k == 4 {
                    let t: Option<Vec<f64>> = row.iter().map(|&p| transform.apply(p)).collect();
                    if let Some(t) = t {
                        within.push(t[0] - t[1]);
                        within.push(t[2] - t[3]);
                    }
                }
                exams.0.push(a);
                exams.1.push(b);
            }
            _ => rejected += 1,
        }
    }
    let rows = exams.0.len();
    if rows < 3 {
        return Err(Error::InsufficientData { needed: 3, got: rows });
    }
    let w: Vec<f64> = exams.0.iter().zip(&exams.1).map(|(a, b)| 0.5 * (a + b)).collect();
    let diff: Vec<f64> = exams.0.iter().zip(&exams.1).map(|(a, b)| a - b).collect();
    // Var(W1 - W2) = 2 var(U_exam); the averaged error has var(U_exam) / 2
    let u2 = 0.25 * sample_variance(&diff);
    let x2 = sample_variance(&w) - u2;
    if !(x2 > 0.0) {
        return Err(Error::NegativeSignalVariance {
            observed: sample_variance(&w),
            error: u2,
        });
    }
    let within_exam_sigma =
        (within.len() >= 2).then(|| (0.5 * within.iter().map(|d| d * d).sum::<f64>() / within.len() as f64).sqrt());
    Ok(ReplicateEstimate {
        w,
        sigma_x: x2.sqrt(),
        sigma_u: u2.sqrt(),
        within_exam_sigma,
        rows,
        rejected,
    })
}

/// A numeric CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse("missing header row".into()));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, header has {}",
                line + 2,
                rec.len(),
                headers.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("row {}, column '{}': '{field}' is not a number", line + 2, headers[j]))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", line + 2)));
            }
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(Table { headers, columns })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    read_table(std::fs::File::open(path)?)
}

/// A single data column, chosen by name or the first one.
pub fn select_column(table: &Table, name: Option<&str>) -> Result<Vec<f64>> {
    match name {
        None => Ok(table.columns[0].clone()),
        Some(n) => table
            .headers
            .iter()
            .position(|h| h == n)
            .map(|j| table.columns[j].clone())
            .ok_or_else(|| Error::Config(format!("no column named '{n}' in the input"))),
    }
}

pub fn paired_from_table(table: &Table) -> Result<PairedInstrumentData> {
    if table.columns.len() != 2 {
        return Err(Error::Config(format!(
            "paired input needs exactly 2 columns (w1,w2), got {}",
            table.columns.len()
        )));
    }
    Ok(PairedInstrumentData {
        w1: table.columns[0].clone(),
        w2: table.columns[1].clone(),
    })
}

pub fn replicate_from_table(table: &Table) -> Result<ReplicateData> {
    let k = table.columns.len();
    if k != 2 && k != 4 {
        return Err(Error::Config(format!(
            "replicate input needs 2 columns (exam1,exam2) or 4 columns (exam1_a,exam1_b,exam2_a,exam2_b), got {k}"
        )));
    }
    Ok(ReplicateData {
        columns: table.columns.clone(),
    })
}
