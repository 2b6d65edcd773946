//! Spearman rank correlation, log returns and date-indexed series tables.

use std::io::Read;
use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Spearman's ρ and its two-sided p-value (t approximation, `n − 2` df).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::invalid("series", "x and y differ in length"));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(x.len()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::UndefinedCorrelation)?;
    Ok((rho, p_value(rho, x.len())))
}

fn p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// `r_t = ln(v_t / v_{t−1})`.
pub fn log_returns(series: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = series.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
        return Err(Error::NonPositive { index, value });
    }
    Ok(series.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Date-indexed numeric columns; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesTable {
    pub dates: Vec<String>,
    pub columns: Vec<(String, Vec<Option<f64>>)>,
}

impl SeriesTable {
    /// First CSV column is the date; every other column is numeric. Empty
    /// cells and `NaN` are missing.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::invalid("series", "missing header row"));
        }
        let mut table = SeriesTable {
            dates: Vec::new(),
            columns: headers.iter().skip(1).map(|h| (h.to_owned(), Vec::new())).collect(),
        };
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            table.dates.push(record.get(0).unwrap_or_default().to_owned());
            for (c, (name, values)) in table.columns.iter_mut().enumerate() {
                let cell = record.get(c + 1).unwrap_or("").trim();
                let value = if cell.is_empty() {
                    None
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::invalid(format!("row {}.{name}", row + 2), format!("`{cell}` is not a number"))
                    })?;
                    (!v.is_nan()).then_some(v)
                };
                values.push(value);
            }
        }
        Ok(table)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Appends `name = numerator / denominator`, missing where either side is
    /// missing or the denominator is zero.
    pub fn with_ratio(mut self, name: &str, numerator: &str, denominator: &str) -> Result<Self> {
        if self.columns.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!("series.{name}"), "column already exists"));
        }
        let ratio = self
            .column(numerator)?
            .iter()
            .zip(self.column(denominator)?)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) if *b != 0.0 => Some(a / b),
                _ => None,
            })
            .collect();
        self.columns.push((name.to_owned(), ratio));
        Ok(self)
    }
}

fn returns_with_gaps(values: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    if let Some((index, value)) =
        values.iter().enumerate().find_map(|(i, v)| v.filter(|x| x.is_nan() || *x <= 0.0).map(|x| (i, x)))
    {
        return Err(Error::NonPositive { index, value });
    }
    Ok(values
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some((b / a).ln()),
            _ => None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCell {
    pub x: String,
    pub y: String,
    /// Complete pairs used.
    pub n: usize,
    #[serde(skip)]
    pub result: Result<(f64, f64)>,
}

impl CorrelationCell {
    pub fn stars(&self) -> &'static str {
        match self.result {
            Ok((_, p)) => stars(p),
            Err(_) => "",
        }
    }
}

/// Pairwise Spearman over the requested column pairs; every pair of columns
/// (diagonal included) when `pairs` is empty.
pub fn correlate_table(
    table: &SeriesTable,
    pairs: &[(String, String)],
    use_log_returns: bool,
) -> Result<Vec<CorrelationCell>> {
    let pairs: Vec<(String, String)> = if pairs.is_empty() {
        let names: Vec<&str> = table.names().collect();
        let mut all = Vec::new();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i..] {
                all.push((a.to_string(), b.to_string()));
            }
        }
        all
    } else {
        pairs.to_vec()
    };
    let mut out = Vec::with_capacity(pairs.len());
    for (xn, yn) in pairs {
        let (x, y) = (table.column(&xn)?, table.column(&yn)?);
        let prepared = if use_log_returns {
            returns_with_gaps(x).and_then(|rx| Ok((rx, returns_with_gaps(y)?)))
        } else {
            Ok((x.to_vec(), y.to_vec()))
        };
        let (n, result) = match prepared {
            Err(e) => (0, Err(e)),
            Ok((x, y)) => {
                let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).unzip();
                (xs.len(), spearman(&xs, &ys))
            }
        };
        out.push(CorrelationCell { x: xn, y: yn, n, result });
    }
    Ok(out)
}

pub const CORRELATION_CSV_HEADER: [&str; 6] = ["x", "y", "n", "rho", "p_value", "stars"];

/// Long-format CSV; failed cells carry `undefined` in place of numbers.
pub fn write_correlations<W: std::io::Write>(cells: &[CorrelationCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CORRELATION_CSV_HEADER)?;
    for c in cells {
        let (rho, p) = match c.result {
            Ok((rho, p)) => (rho.to_string(), if p != 0.0 && p < 1e-4 { format!("{p:e}") } else { p.to_string() }),
            Err(_) => ("undefined".to_owned(), "undefined".to_owned()),
        };
        w.write_record([c.x.as_str(), c.y.as_str(), &c.n.to_string(), &rho, &p, c.stars()])?;
    }
    w.flush()?;
    Ok(())
}
