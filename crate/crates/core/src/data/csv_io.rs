use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::PriceTable;
use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Reads a price file: header `date,<TICKER>...`, ISO dates, decimal prices,
/// empty cell for a missing price. Rows are returned sorted by date.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PriceTable> {
    read_csv(std::fs::File::open(path)?)
}

pub fn read_csv(input: impl Read) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    };
    if header.get(0) != Some("date") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("first column must be `date`, found {:?}", header.get(0).unwrap_or("")),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if tickers.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no ticker columns".into(),
        });
    }
    if let Some(t) = tickers.iter().find(|t| t.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("empty ticker name {t:?}"),
        });
    }
    for (i, t) in tickers.iter().enumerate() {
        if tickers[..i].contains(t) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("duplicate ticker {t}"),
            });
        }
    }

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != tickers.len() + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", tickers.len() + 1, record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT).map_err(|e| Error::Parse {
            line,
            msg: format!("bad date {:?}: {e}", &record[0]),
        })?;
        let mut prices = Vec::with_capacity(tickers.len());
        for (cell, ticker) in record.iter().skip(1).zip(&tickers) {
            if cell.is_empty() {
                prices.push(None);
                continue;
            }
            let p: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad price {cell:?} for {ticker}"),
            })?;
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Data(format!(
                    "line {line}: non-positive price {p} for {ticker} on {date}"
                )));
            }
            prices.push(Some(p));
        }
        rows.push((date, prices));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!("duplicate date {}", w[0].0)));
    }
    let (dates, prices) = rows.into_iter().unzip();
    Ok(PriceTable { dates, tickers, prices })
}

pub fn write_csv(table: &PriceTable, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(table, std::io::BufWriter::new(file))
}

pub fn write_csv_to(table: &PriceTable, mut out: impl Write) -> Result<()> {
    write!(out, "date")?;
    for t in &table.tickers {
        write!(out, ",{t}")?;
    }
    writeln!(out)?;
    for (date, row) in table.dates.iter().zip(&table.prices) {
        write!(out, "{}", date.format(DATE_FORMAT))?;
        for p in row {
            match p {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
