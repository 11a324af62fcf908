//! Price ingestion, return construction, calendar splits and synthetic data.

mod csv_io;
mod splits;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to};
pub use splits::{yearly_splits, Split, WalkForwardSchedule};
pub use synth::{business_days, synth_generate, SynthConfig};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::objective::arithmetic_return;
use crate::tensor::Tensor;

/// Daily prices, one row per date. `None` marks a missing observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub prices: Vec<Vec<Option<f64>>>,
}

impl PriceTable {
    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Daily arithmetic returns. Row `t` is the return from `dates[t-1]`'s close
/// (in the source price table) to `dates[t]`'s close.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnTable {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: Vec<f64>,
}

impl ReturnTable {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: Vec<f64>) -> Result<Self> {
        if tickers.is_empty() || returns.len() != dates.len() * tickers.len() {
            return Err(Error::Data(format!(
                "{} returns do not fill {} dates x {} tickers",
                returns.len(),
                dates.len(),
                tickers.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("dates not strictly increasing at {}", w[1])));
        }
        if let Some(r) = returns.iter().find(|r| !(r.is_finite() && **r > -1.0)) {
            return Err(Error::Data(format!("return {r} is not above -1")));
        }
        Ok(ReturnTable {
            dates,
            tickers,
            returns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_assets();
        &self.returns[t * n..(t + 1) * n]
    }

    pub fn column(&self, asset: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.row(t)[asset]).collect()
    }

    /// Rows `start..start+len` as a matrix.
    pub fn block(&self, start: usize, len: usize) -> Tensor {
        let n = self.n_assets();
        Tensor::matrix(len, n, self.returns[start * n..(start + len) * n].to_vec()).expect("block within table")
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// Forward-fills gaps, drops rows before every ticker has a first price,
/// and converts prices to arithmetic returns.
pub fn clean_and_return(table: &PriceTable) -> Result<ReturnTable> {
    let n = table.n_assets();
    let mut first_full = 0;
    for (i, ticker) in table.tickers.iter().enumerate() {
        let present: Vec<usize> = (0..table.len()).filter(|&t| table.prices[t][i].is_some()).collect();
        if present.len() < 2 {
            return Err(Error::Data(format!(
                "ticker {ticker} has {} observations, need at least 2",
                present.len()
            )));
        }
        first_full = first_full.max(present[0]);
    }
    let mut last: Vec<f64> = (0..n)
        .map(|i| table.prices[first_full][i].expect("first full row is complete"))
        .collect();
    let rows = table.len() - first_full - 1;
    if rows == 0 {
        return Err(Error::Data("fewer than two dates with a price for every ticker".into()));
    }
    let mut dates = Vec::with_capacity(rows);
    let mut returns = Vec::with_capacity(rows * n);
    for t in first_full + 1..table.len() {
        dates.push(table.dates[t]);
        for (i, prev) in last.iter_mut().enumerate() {
            let now = table.prices[t][i].unwrap_or(*prev);
            returns.push(arithmetic_return(now, *prev)?);
            *prev = now;
        }
    }
    ReturnTable::new(dates, table.tickers.clone(), returns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn table(prices: Vec<Vec<Option<f64>>>) -> PriceTable {
        let dates = (0..prices.len())
            .map(|i| d("2020-01-01") + chrono::Days::new(i as u64))
            .collect();
        let tickers = (0..prices[0].len()).map(|i| format!("A{i}")).collect();
        PriceTable { dates, tickers, prices }
    }

    #[test]
    fn forward_fill_then_returns() {
        let t = table(vec![vec![Some(100.0)], vec![None], vec![Some(102.0)]]);
        let r = clean_and_return(&t).unwrap();
        assert_eq!(r.row(0)[0], 0.0);
        assert!((r.row(1)[0] - 0.02).abs() < 1e-15);
        assert_eq!(r.dates(), &t.dates[1..]);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let t = table(vec![vec![Some(5.0), Some(7.0)]; 4]);
        let r = clean_and_return(&t).unwrap();
        assert!(r.column(0).iter().chain(&r.column(1)).all(|&v| v == 0.0));
    }

    #[test]
    fn leading_missing_block_is_dropped() {
        let t = table(vec![
            vec![Some(1.0), None],
            vec![Some(1.1), None],
            vec![Some(1.2), Some(10.0)],
            vec![Some(1.3), Some(11.0)],
            vec![Some(1.4), Some(12.0)],
        ]);
        let r = clean_and_return(&t).unwrap();
        assert_eq!(r.dates(), &t.dates[3..]);
        assert!((r.row(0)[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sparse_ticker_rejected() {
        let t = table(vec![
            vec![Some(1.0), None],
            vec![Some(1.1), Some(2.0)],
            vec![Some(1.2), None],
        ]);
        let err = clean_and_return(&t).unwrap_err();
        assert!(err.to_string().contains("A1"), "{err}");
    }

    #[test]
    fn return_table_rejects_bad_returns() {
        let dates = vec![d("2020-01-01"), d("2020-01-02")];
        let tk = vec!["A".to_string()];
        assert!(ReturnTable::new(dates.clone(), tk.clone(), vec![0.0, -1.0]).is_err());
        assert!(ReturnTable::new(dates.clone(), tk.clone(), vec![0.0, f64::NAN]).is_err());
        assert!(ReturnTable::new(vec![dates[1], dates[0]], tk, vec![0.0, 0.0]).is_err());
    }
}
