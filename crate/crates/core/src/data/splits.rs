use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use super::ReturnTable;
use crate::error::{Error, Result};

/// One expanding-window split, as row ranges into a [`ReturnTable`].
/// `val` is the tail of `train`; `test` starts right after `train`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Split {
    pub test_year: i32,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Training rows that are not held out for validation.
    pub fn fit_rows(&self) -> Range<usize> {
        self.train.start..self.val.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WalkForwardSchedule {
    pub splits: Vec<Split>,
}

impl WalkForwardSchedule {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    /// All test rows, in order.
    pub fn test_rows(&self) -> Range<usize> {
        match (self.splits.first(), self.splits.last()) {
            (Some(a), Some(b)) => a.test.start..b.test.end,
            _ => 0..0,
        }
    }
}

/// A year counts as complete when later data exists or the table reaches
/// its last week (on or after 24 December).
fn year_complete(dates: &[NaiveDate], year: i32) -> bool {
    let last = *dates.last().expect("non-empty");
    last.year() > year || last >= NaiveDate::from_ymd_opt(year, 12, 24).expect("valid date")
}

/// One split per complete calendar year from `first_test_year`, each
/// training on every earlier row with the final `val_fraction` held out.
pub fn yearly_splits(table: &ReturnTable, first_test_year: i32, val_fraction: f64) -> Result<WalkForwardSchedule> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 0.5), got {val_fraction}"
        )));
    }
    let dates = table.dates();
    if dates.is_empty() {
        return Err(Error::Data("empty return table".into()));
    }
    let mut splits = Vec::new();
    let mut year = first_test_year;
    while year_complete(dates, year) {
        let start = dates.partition_point(|d| d.year() < year);
        let end = dates.partition_point(|d| d.year() <= year);
        if start == 0 {
            return Err(Error::Data(format!("no training data before test year {year}")));
        }
        if start < end {
            let n_val = (val_fraction * start as f64).floor() as usize;
            if n_val == 0 || n_val == start {
                return Err(Error::Data(format!(
                    "{start} training rows before {year} are too few for a validation split"
                )));
            }
            splits.push(Split {
                test_year: year,
                train: 0..start,
                val: start - n_val..start,
                test: start..end,
            });
        }
        year += 1;
    }
    if splits.is_empty() {
        return Err(Error::Data(format!(
            "data ending {} has no complete test year from {first_test_year}",
            dates[dates.len() - 1]
        )));
    }
    Ok(WalkForwardSchedule { splits })
}
