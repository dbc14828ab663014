//! Price loading, log-return conversion, and rolling window slicing.
//!
//! CSV schema: header row, first column an ISO-8601 date, one column per asset.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UprError};

/// Adjusted closing prices, dates ascending, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// Row-major `n x p`.
    prices: Vec<f64>,
    dropped: Vec<String>,
}

/// Daily log returns, row-major `n x p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: Vec<f64>,
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(invalid(format!(
            "dates must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: Vec<f64>) -> Result<Self> {
        let p = tickers.len();
        if p == 0 {
            return Err(invalid("no assets"));
        }
        if dates.len() < 2 {
            return Err(invalid("need at least two price rows"));
        }
        if prices.len() != dates.len() * p {
            return Err(invalid("price matrix shape does not match dates x tickers"));
        }
        check_dates(&dates)?;
        for (idx, &v) in prices.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                let row = idx / p;
                return Err(UprError::NonPositivePrice {
                    row,
                    date: dates[row].to_string(),
                    ticker: tickers[idx % p].clone(),
                    value: v,
                });
            }
        }
        Ok(PricePanel {
            dates,
            tickers,
            prices,
            dropped: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// Tickers removed during cleaning because of missing cells.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn price(&self, row: usize, col: usize) -> f64 {
        self.prices[row * self.tickers.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let p = self.tickers.len();
        &self.prices[row * p..(row + 1) * p]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_panel_csv(out, &self.dates, &self.tickers, &self.prices)
    }
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: Vec<f64>) -> Result<Self> {
        let p = tickers.len();
        if p == 0 {
            return Err(invalid("no assets"));
        }
        if dates.is_empty() {
            return Err(invalid("no return rows"));
        }
        if returns.len() != dates.len() * p {
            return Err(invalid(
                "return matrix shape does not match dates x tickers",
            ));
        }
        check_dates(&dates)?;
        if let Some(idx) = returns.iter().position(|r| !r.is_finite()) {
            return Err(invalid(format!(
                "non-finite return at row {}, column {}",
                idx / p,
                tickers[idx % p]
            )));
        }
        Ok(ReturnPanel {
            dates,
            tickers,
            returns,
        })
    }

    /// Panel with consecutive calendar dates from 2000-01-01 and tickers `X1..Xp`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid("ragged return rows"));
        }
        let tickers = (1..=p).map(|j| format!("X{j}")).collect();
        Self::from_flat(rows.len(), tickers, rows.concat())
    }

    pub(crate) fn from_flat(n: usize, tickers: Vec<String>, returns: Vec<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = start.iter_days().take(n).collect();
        Self::new(dates, tickers, returns)
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.tickers.len();
        &self.returns[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.returns.chunks_exact(self.tickers.len())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.returns
    }

    /// Rows `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<ReturnPanel> {
        if start > end || end >= self.n_rows() {
            return Err(invalid(format!(
                "row range [{start}, {end}] outside panel of {} rows",
                self.n_rows()
            )));
        }
        let p = self.n_assets();
        Ok(ReturnPanel {
            dates: self.dates[start..=end].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns[start * p..(end + 1) * p].to_vec(),
        })
    }

    /// Columns reordered by `order` (a permutation of `0..p`).
    pub fn select_columns(&self, order: &[usize]) -> Result<ReturnPanel> {
        let p = self.n_assets();
        if order.iter().any(|&j| j >= p) {
            return Err(invalid("column index out of range"));
        }
        let tickers = order.iter().map(|&j| self.tickers[j].clone()).collect();
        let returns = self
            .rows()
            .flat_map(|r| order.iter().map(move |&j| r[j]))
            .collect();
        ReturnPanel::new(self.dates.clone(), tickers, returns)
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        let p = self.n_assets();
        let mut mu = vec![0.0; p];
        for r in self.rows() {
            for (m, x) in mu.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = self.n_rows() as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        mu
    }

    /// `x_i^T beta` for every row.
    pub fn portfolio_returns(&self, beta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(beta.len(), self.n_assets());
        self.rows().map(|r| dot(r, beta)).collect()
    }

    /// Same returns scaled by `lambda`.
    pub fn scaled(&self, lambda: f64) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates.clone(),
            tickers: self.tickers.clone(),
            returns: self.returns.iter().map(|r| r * lambda).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_panel_csv(out, &self.dates, &self.tickers, &self.returns)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<ReturnPanel> {
        let raw = read_raw(input)?;
        let p = raw.tickers.len();
        let mut returns = Vec::with_capacity(raw.cells.len());
        for (idx, cell) in raw.cells.iter().enumerate() {
            match cell {
                Some(v) => returns.push(*v),
                None => {
                    return Err(UprError::Parse(format!(
                        "missing return at row {}, column {}",
                        idx / p + 1,
                        raw.tickers[idx % p]
                    )))
                }
            }
        }
        ReturnPanel::new(raw.dates, raw.tickers, returns)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReturnPanel> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn write_panel_csv<W: Write>(
    out: W,
    dates: &[NaiveDate],
    tickers: &[String],
    values: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(tickers.iter().cloned());
    w.write_record(&header)?;
    let p = tickers.len();
    for (i, d) in dates.iter().enumerate() {
        let mut rec = vec![d.format("%Y-%m-%d").to_string()];
        // `{:?}` on f64 prints the shortest string that parses back exactly
        rec.extend(values[i * p..(i + 1) * p].iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

struct RawPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    cells: Vec<Option<f64>>,
}

fn read_raw<R: Read>(input: R) -> Result<RawPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(UprError::Parse(
            "expected a date column followed by at least one asset column".into(),
        ));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(UprError::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                header.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| {
            UprError::Parse(format!("row {}: bad date {:?}: {e}", line + 1, &rec[0]))
        })?;
        dates.push(date);
        for (j, field) in rec.iter().skip(1).enumerate() {
            if field.is_empty()
                || field.eq_ignore_ascii_case("na")
                || field.eq_ignore_ascii_case("nan")
            {
                cells.push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    UprError::Parse(format!(
                        "row {}, column {}: not a number: {field:?}",
                        line + 1,
                        tickers[j]
                    ))
                })?;
                cells.push(Some(v));
            }
        }
    }
    Ok(RawPanel {
        dates,
        tickers,
        cells,
    })
}

/// Parse a price CSV, dropping every asset that has a missing cell.
pub fn read_prices<R: Read>(input: R) -> Result<PricePanel> {
    let raw = read_raw(input)?;
    if raw.dates.len() < 2 {
        return Err(invalid("price file needs at least two rows"));
    }
    let p = raw.tickers.len();
    let keep: Vec<usize> = (0..p)
        .filter(|&j| raw.cells.iter().skip(j).step_by(p).all(Option::is_some))
        .collect();
    let dropped: Vec<String> = (0..p)
        .filter(|j| !keep.contains(j))
        .map(|j| raw.tickers[j].clone())
        .collect();
    for t in &dropped {
        warn!("dropping asset {t}: missing values");
    }
    if keep.is_empty() {
        return Err(invalid(
            "no assets left after dropping columns with missing values",
        ));
    }
    let tickers: Vec<String> = keep.iter().map(|&j| raw.tickers[j].clone()).collect();
    let prices: Vec<f64> = raw
        .cells
        .chunks_exact(p)
        .flat_map(|row| {
            keep.iter()
                .map(move |&j| row[j].expect("kept column is complete"))
        })
        .collect();
    let mut panel = PricePanel::new(raw.dates, tickers, prices)?;
    panel.dropped = dropped;
    Ok(panel)
}

pub fn load_prices(path: impl AsRef<Path>) -> Result<PricePanel> {
    let f = std::fs::File::open(path.as_ref())?;
    read_prices(std::io::BufReader::new(f))
}

/// `ln(P[t+1] / P[t])`, dated by the later row.
pub fn to_log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    let n = panel.n_rows();
    if n < 2 {
        return Err(invalid("need at least two price rows"));
    }
    let returns = (1..n)
        .flat_map(|t| {
            panel
                .row(t)
                .iter()
                .zip(panel.row(t - 1))
                .map(|(now, prev)| (now / prev).ln())
        })
        .collect();
    ReturnPanel::new(panel.dates[1..].to_vec(), panel.tickers.clone(), returns)
}

/// Fit/evaluation row ranges of one rolling step (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingWindow {
    pub fit_start: usize,
    pub fit_end: usize,
    pub eval_start: usize,
    pub eval_end: usize,
}

impl RollingWindow {
    pub fn eval_len(&self) -> usize {
        self.eval_end - self.eval_start + 1
    }
}

/// Windows of `window` fit rows followed by up to `horizon` evaluation rows,
/// advancing by `horizon`. A short final evaluation range is kept when
/// `keep_partial` is set.
pub fn rolling_windows_with(
    n_rows: usize,
    window: usize,
    horizon: usize,
    keep_partial: bool,
) -> Result<Vec<RollingWindow>> {
    if window == 0 || horizon == 0 {
        return Err(invalid("window and horizon must be positive"));
    }
    if n_rows <= window {
        return Err(invalid(format!(
            "{n_rows} rows leave no evaluation data after a {window}-row window"
        )));
    }
    let mut out = Vec::new();
    let mut eval_start = window;
    while eval_start < n_rows {
        let eval_end = (eval_start + horizon - 1).min(n_rows - 1);
        if eval_end - eval_start + 1 < horizon && !keep_partial {
            break;
        }
        out.push(RollingWindow {
            fit_start: eval_start - window,
            fit_end: eval_start - 1,
            eval_start,
            eval_end,
        });
        eval_start += horizon;
    }
    Ok(out)
}

pub fn rolling_windows(n_rows: usize, window: usize, horizon: usize) -> Result<Vec<RollingWindow>> {
    rolling_windows_with(n_rows, window, horizon, true)
}
