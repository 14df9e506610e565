//! Columnar survival/mediation data: ingestion, validation, mediator
//! standardization and seeded row orderings.
//!
//! Times are always stored on the log scale. Mediators are stored row-major
//! (`n × p`) so that streaming over rows touches contiguous memory.

use crate::rng::rng_from_seed;
use crate::stats::normal_quantile;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error: column `{0}` not found")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("domain error at row {row}, column `{column}`: {reason}")]
    Domain { row: usize, column: String, reason: String },
    #[error("positivity violated: exposure takes a single level ({level}) in all {n} rows")]
    Positivity { level: u8, n: usize },
    #[error("degenerate mediator column {k} (label `{label}`): constant values cannot be z-scored")]
    DegenerateColumn { k: usize, label: String },
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("at least {needed} rows required, got {n}")]
    TooFewRows { needed: usize, n: usize },
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    Raw,
    Zscore,
    NormalScore,
}

/// One row of the data, borrowed from a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Log-scale follow-up time `min(T, C)`.
    pub x: f64,
    pub delta: u8,
    pub a: u8,
    pub b: &'a [f64],
    pub z: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    delta: Vec<u8>,
    a: Vec<u8>,
    b: Vec<f64>,
    z: Vec<f64>,
    p: usize,
    q: usize,
    mediator_labels: Vec<String>,
    confounder_labels: Vec<String>,
    standardization: Standardization,
}

impl Dataset {
    /// Build a dataset from columns; `b` is row-major `n × p`, `z` row-major `n × q`.
    pub fn new(
        x: Vec<f64>,
        delta: Vec<u8>,
        a: Vec<u8>,
        b: Vec<f64>,
        p: usize,
        z: Vec<f64>,
        q: usize,
    ) -> Result<Self, DatasetError> {
        let n = x.len();
        if delta.len() != n || a.len() != n {
            return Err(DatasetError::Dimension(format!(
                "x has {n} rows, delta {}, a {}",
                delta.len(),
                a.len()
            )));
        }
        if b.len() != n * p {
            return Err(DatasetError::Dimension(format!(
                "mediator buffer has {} values, expected {n} x {p}",
                b.len()
            )));
        }
        if z.len() != n * q {
            return Err(DatasetError::Dimension(format!(
                "confounder buffer has {} values, expected {n} x {q}",
                z.len()
            )));
        }
        for (i, &xi) in x.iter().enumerate() {
            if !xi.is_finite() {
                return Err(domain(i, "x", "time must be finite"));
            }
        }
        for (i, (&d, &ai)) in delta.iter().zip(&a).enumerate() {
            if d > 1 {
                return Err(domain(i, "delta", "event indicator must be 0 or 1"));
            }
            if ai > 1 {
                return Err(domain(i, "a", "exposure must be 0 or 1"));
            }
        }
        if let Some(pos) = b.iter().position(|v| !v.is_finite()) {
            return Err(domain(pos / p.max(1), "b", "mediator values must be finite"));
        }
        if let Some(pos) = z.iter().position(|v| !v.is_finite()) {
            return Err(domain(pos / q.max(1), "z", "confounder values must be finite"));
        }
        let exposed = a.iter().filter(|&&v| v == 1).count();
        if exposed == 0 || exposed == n {
            return Err(DatasetError::Positivity {
                level: if exposed == 0 { 0 } else { 1 },
                n,
            });
        }
        Ok(Self {
            x,
            delta,
            a,
            b,
            z,
            p,
            q,
            mediator_labels: (1..=p).map(|k| format!("B{k}")).collect(),
            confounder_labels: (1..=q).map(|l| format!("Z{l}")).collect(),
            standardization: Standardization::Raw,
        })
    }

    pub fn with_labels(
        mut self,
        mediator_labels: Vec<String>,
        confounder_labels: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if mediator_labels.len() != self.p || confounder_labels.len() != self.q {
            return Err(DatasetError::Dimension("label count mismatch".into()));
        }
        self.mediator_labels = mediator_labels;
        self.confounder_labels = confounder_labels;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn delta(&self) -> &[u8] {
        &self.delta
    }
    pub fn exposure(&self) -> &[u8] {
        &self.a
    }
    /// Row-major `n × p` mediator buffer.
    pub fn mediators(&self) -> &[f64] {
        &self.b
    }
    /// Row-major `n × q` confounder buffer.
    pub fn confounders(&self) -> &[f64] {
        &self.z
    }
    pub fn mediator_row(&self, i: usize) -> &[f64] {
        &self.b[i * self.p..(i + 1) * self.p]
    }
    pub fn confounder_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }
    #[inline]
    pub fn mediator(&self, i: usize, k: usize) -> f64 {
        self.b[i * self.p + k]
    }
    pub fn mediator_column(&self, k: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.mediator(i, k)).collect()
    }
    pub fn mediator_labels(&self) -> &[String] {
        &self.mediator_labels
    }
    pub fn confounder_labels(&self) -> &[String] {
        &self.confounder_labels
    }
    pub fn standardization(&self) -> Standardization {
        self.standardization
    }
    pub fn censored_fraction(&self) -> f64 {
        self.delta.iter().filter(|&&d| d == 0).count() as f64 / self.n() as f64
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        Observation {
            x: self.x[i],
            delta: self.delta[i],
            a: self.a[i],
            b: self.mediator_row(i),
            z: self.confounder_row(i),
        }
    }

    /// Copy of the dataset with the confounder block removed.
    pub fn without_confounders(&self) -> Dataset {
        let mut out = self.clone();
        out.z.clear();
        out.q = 0;
        out.confounder_labels.clear();
        out
    }

    /// Copy with mediator column `k` replaced by `f(value)`.
    pub fn map_mediator(&self, k: usize, f: impl Fn(f64) -> f64) -> Dataset {
        let mut out = self.clone();
        for i in 0..out.n() {
            let v = &mut out.b[i * out.p + k];
            *v = f(*v);
        }
        out
    }

    /// Rows rearranged so that row `i` of the result is row `perm[i]` of `self`.
    pub fn reordered(&self, perm: &[usize]) -> Dataset {
        assert_eq!(perm.len(), self.n(), "permutation length");
        let mut b = Vec::with_capacity(self.b.len());
        let mut z = Vec::with_capacity(self.z.len());
        for &i in perm {
            b.extend_from_slice(self.mediator_row(i));
            z.extend_from_slice(self.confounder_row(i));
        }
        Dataset {
            x: perm.iter().map(|&i| self.x[i]).collect(),
            delta: perm.iter().map(|&i| self.delta[i]).collect(),
            a: perm.iter().map(|&i| self.a[i]).collect(),
            b,
            z,
            p: self.p,
            q: self.q,
            mediator_labels: self.mediator_labels.clone(),
            confounder_labels: self.confounder_labels.clone(),
            standardization: self.standardization,
        }
    }

    /// Rows permuted by [`ordering_permutation`].
    pub fn random_ordering(&self, seed: u64) -> Dataset {
        self.reordered(&ordering_permutation(self.n(), seed))
    }

    pub fn standardize_mediators(&self, method: Standardization) -> Result<Dataset, DatasetError> {
        let n = self.n();
        if method == Standardization::Raw {
            return Ok(self.clone());
        }
        if n < 2 {
            return Err(DatasetError::TooFewRows { needed: 2, n });
        }
        let p = self.p;
        let columns: Vec<Result<Vec<f64>, DatasetError>> = (0..p)
            .into_par_iter()
            .map(|k| {
                let col = self.mediator_column(k);
                match method {
                    Standardization::Zscore => zscore(&col).ok_or_else(|| {
                        DatasetError::DegenerateColumn {
                            k: k + 1,
                            label: self.mediator_labels[k].clone(),
                        }
                    }),
                    Standardization::NormalScore => Ok(normal_scores(&col)),
                    Standardization::Raw => unreachable!(),
                }
            })
            .collect();
        let mut out = self.clone();
        for (k, col) in columns.into_iter().enumerate() {
            let col = col?;
            for (i, v) in col.into_iter().enumerate() {
                out.b[i * p + k] = v;
            }
        }
        out.standardization = method;
        Ok(out)
    }
}

fn domain(row: usize, column: &str, reason: &str) -> DatasetError {
    DatasetError::Domain {
        row,
        column: column.to_string(),
        reason: reason.to_string(),
    }
}

/// Centre to mean 0 and scale to sample sd 1 (divisor `n - 1`).
/// Returns `None` for a constant column.
pub fn zscore(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1.0)).sqrt();
    let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale) || sd == 0.0 {
        return None;
    }
    Some(col.iter().map(|v| (v - mean) / sd).collect())
}

/// Ranks `1..=n` with ties sharing their average rank.
pub fn average_ranks(col: &[f64]) -> Vec<f64> {
    let n = col.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| col[i].total_cmp(&col[j]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && col[idx[end]] == col[idx[start]] {
            end += 1;
        }
        // positions start..end (0-based) share ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Blom normal scores `Φ⁻¹((r − 3/8)/(n + 1/4))` of the average ranks.
///
/// With ties the scores no longer sum to zero, so the column is re-centred;
/// without ties the scores are symmetric and are returned as computed.
pub fn normal_scores(col: &[f64]) -> Vec<f64> {
    let n = col.len() as f64;
    let ranks = average_ranks(col);
    let has_ties = ranks.iter().any(|r| r.fract() != 0.0);
    let mut out: Vec<f64> = ranks
        .iter()
        .map(|r| normal_quantile((r - 0.375) / (n + 0.25)))
        .collect();
    if has_ties {
        let m = out.iter().sum::<f64>() / n;
        out.iter_mut().for_each(|v| *v -= m);
    }
    out
}

/// Fisher–Yates permutation of `0..n` driven by ChaCha8 seeded with `seed`.
///
/// Position `i` of the result holds the original row placed at `i`.
pub fn ordering_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Which columns of a CSV hold the mediators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MediatorColumns {
    /// Every column whose header starts with the prefix.
    Prefix(String),
    List(Vec<String>),
    /// Every column not claimed by time, status, exposure or confounders.
    Remaining,
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub time: String,
    pub status: String,
    pub exposure: String,
    pub mediators: MediatorColumns,
    pub confounders: Vec<String>,
    /// Times in the file are on the raw scale and are logged at ingestion.
    pub log_time: bool,
}

impl CsvSchema {
    pub fn new(time: &str, status: &str, exposure: &str) -> Self {
        Self {
            time: time.into(),
            status: status.into(),
            exposure: exposure.into(),
            mediators: MediatorColumns::Remaining,
            confounders: Vec::new(),
            log_time: false,
        }
    }
}

/// Read a comma-delimited UTF-8 file with a header row.
///
/// Rows are numbered from 1 (the first data row) in error messages.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let t_col = find(&schema.time)?;
    let s_col = find(&schema.status)?;
    let a_col = find(&schema.exposure)?;
    let z_cols = schema
        .confounders
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>, _>>()?;
    let claimed = |i: usize| i == t_col || i == s_col || i == a_col || z_cols.contains(&i);
    let b_cols: Vec<usize> = match &schema.mediators {
        MediatorColumns::List(names) => names.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        MediatorColumns::Prefix(prefix) => (0..headers.len())
            .filter(|&i| headers[i].starts_with(prefix.as_str()) && !claimed(i))
            .collect(),
        MediatorColumns::Remaining => (0..headers.len()).filter(|&i| !claimed(i)).collect(),
    };
    if b_cols.is_empty() {
        return Err(DatasetError::Schema("no mediator columns selected".into()));
    }
    let (p, q) = (b_cols.len(), z_cols.len());
    let (mut x, mut delta, mut a) = (Vec::new(), Vec::new(), Vec::new());
    let (mut b, mut z) = (Vec::new(), Vec::new());
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let num = |c: usize| -> Result<f64, DatasetError> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::Parse {
                    row,
                    column: headers[c].clone(),
                    value: raw.to_string(),
                })
        };
        let binary = |c: usize| -> Result<u8, DatasetError> {
            let v = num(c)?;
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(DatasetError::Domain {
                    row,
                    column: headers[c].clone(),
                    reason: format!("expected 0 or 1, found {v}"),
                })
            }
        };
        let mut t = num(t_col)?;
        if schema.log_time {
            if t <= 0.0 {
                return Err(DatasetError::Domain {
                    row,
                    column: headers[t_col].clone(),
                    reason: format!("raw time {t} is not strictly positive; cannot take log"),
                });
            }
            t = t.ln();
        }
        x.push(t);
        delta.push(binary(s_col)?);
        a.push(binary(a_col)?);
        for &c in &b_cols {
            b.push(num(c)?);
        }
        for &c in &z_cols {
            z.push(num(c)?);
        }
    }
    let labels = |cols: &[usize]| cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::new(x, delta, a, b, p, z, q)?.with_labels(labels(&b_cols), labels(&z_cols))
}
