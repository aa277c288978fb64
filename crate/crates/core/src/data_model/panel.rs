use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N×T matrix of per-period stock returns with ticker and date labels.
///
/// Ticker order is canonical: every vector and matrix produced downstream is
/// aligned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    tickers: Vec<String>,
    dates: Vec<String>,
    values: DMatrix<f64>,
}

impl ReturnsPanel {
    pub fn new(tickers: Vec<String>, dates: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != tickers.len() {
            return Err(Error::DimensionMismatch {
                what: "panel rows",
                expected: tickers.len(),
                found: values.nrows(),
            });
        }
        if values.ncols() != dates.len() {
            return Err(Error::DimensionMismatch {
                what: "panel columns",
                expected: dates.len(),
                found: values.ncols(),
            });
        }
        if tickers.len() < 2 {
            return Err(Error::InsufficientStocks(tickers.len()));
        }
        if dates.len() < 2 {
            return Err(Error::InsufficientObservations {
                needed: 2,
                found: dates.len(),
            });
        }
        let mut seen = HashSet::new();
        for t in &tickers {
            if !seen.insert(t.as_str()) {
                return Err(Error::DuplicateTicker(t.clone()));
            }
        }
        let mut seen = HashSet::new();
        for d in &dates {
            if !seen.insert(d.as_str()) {
                return Err(Error::DuplicateDate(d.clone()));
            }
        }
        for i in 0..values.nrows() {
            for s in 0..values.ncols() {
                if !values[(i, s)].is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: s });
                }
            }
        }
        Ok(Self {
            tickers,
            dates,
            values,
        })
    }

    /// Number of stocks.
    pub fn n(&self) -> usize {
        self.tickers.len()
    }

    /// Number of periods.
    pub fn t(&self) -> usize {
        self.dates.len()
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Returns of the portfolio with the given weights, one per period.
    pub fn portfolio_returns(&self, weights: &DVector<f64>) -> Result<DVector<f64>> {
        if weights.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "portfolio weights",
                expected: self.n(),
                found: weights.len(),
            });
        }
        Ok(self.values.tr_mul(weights))
    }
}

/// Strictly positive betas aligned with a panel's tickers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BetaVector(Vec<f64>);

impl BetaVector {
    /// Validates positivity; `tickers` only labels the error.
    pub fn new(values: Vec<f64>, tickers: &[String]) -> Result<Self> {
        if values.len() != tickers.len() {
            return Err(Error::DimensionMismatch {
                what: "betas",
                expected: tickers.len(),
                found: values.len(),
            });
        }
        for (v, t) in values.iter().zip(tickers) {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidBeta {
                    ticker: t.clone(),
                    value: *v,
                });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    /// Multiplies every beta by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|b| b * c).collect())
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = open_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // skip blank lines
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn parse_cell(value: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = value.parse().map_err(|_| Error::NonNumericCell {
        row,
        col,
        value: value.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue { row, col });
    }
    Ok(v)
}

/// Reads a returns panel: header `ticker,<date1>,...,<dateT>`, one row per
/// ticker. Cell positions in errors are 1-based file line and column.
pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<ReturnsPanel> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let (header, rows) = records.split_first().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        message: "file is empty".into(),
    })?;
    let dates: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if dates.len() < 2 {
        return Err(Error::InsufficientObservations {
            needed: 2,
            found: dates.len(),
        });
    }
    let mut tickers = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * dates.len());
    let mut seen = HashSet::new();
    for (r, rec) in rows.iter().enumerate() {
        let line = r + 2;
        if rec.len() != dates.len() + 1 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: format!(
                    "line {line} has {} fields, expected {}",
                    rec.len(),
                    dates.len() + 1
                ),
            });
        }
        let ticker = rec[0].to_string();
        if !seen.insert(ticker.clone()) {
            return Err(Error::DuplicateTicker(ticker));
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            data.push(parse_cell(cell, line, c + 1)?);
        }
        tickers.push(ticker);
    }
    let values = DMatrix::from_row_slice(tickers.len(), dates.len(), &data);
    ReturnsPanel::new(tickers, dates, values)
}

/// Reads named numeric columns from a CSV keyed by ticker in its first
/// column, aligned to `tickers`. Rows for other tickers are ignored.
pub fn load_keyed_columns(
    path: impl AsRef<Path>,
    tickers: &[String],
    columns: &[&str],
) -> Result<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let (header, rows) = records.split_first().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        message: "file is empty".into(),
    })?;
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .skip(1)
                .position(|h| h == *c)
                .map(|k| k + 1)
                .ok_or_else(|| Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("no {c:?} column"),
                })
        })
        .collect::<Result<_>>()?;
    let mut by_ticker: HashMap<&str, Vec<f64>> = HashMap::new();
    for (r, rec) in rows.iter().enumerate() {
        let line = r + 2;
        let mut vals = Vec::with_capacity(idx.len());
        for &k in &idx {
            let cell = rec.get(k).ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                message: format!("line {line} has no column {}", k + 1),
            })?;
            vals.push(parse_cell(cell, line, k + 1)?);
        }
        if by_ticker.insert(&rec[0], vals).is_some() {
            return Err(Error::DuplicateTicker(rec[0].to_string()));
        }
    }
    let mut out = vec![DVector::zeros(tickers.len()); columns.len()];
    for (i, t) in tickers.iter().enumerate() {
        let vals = by_ticker
            .get(t.as_str())
            .ok_or_else(|| Error::MissingTicker(t.clone()))?;
        for (c, v) in vals.iter().enumerate() {
            out[c][i] = *v;
        }
    }
    Ok(out)
}

/// Writes a panel in the format read by [`load_returns_csv`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_returns_csv(panel: &ReturnsPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(out, "ticker")?;
        for d in panel.dates() {
            write!(out, ",{d}")?;
        }
        writeln!(out)?;
        for (i, t) in panel.tickers().iter().enumerate() {
            write!(out, "{t}")?;
            for s in 0..panel.t() {
                write!(out, ",{}", panel.values()[(i, s)])?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
