//! Out-of-sample evaluation: backtesting a weight stream, the seven summary
//! metrics, and the rolling Sharpe series.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Serialize, Serializer};

use crate::data::ReturnTable;
use crate::error::{Error, Result};
use crate::objective::CostModel;

pub const TRADING_DAYS: f64 = 252.0;

/// Column names of a [`MetricsReport`], in report order.
pub const METRIC_NAMES: [&str; 7] = ["returns", "vol", "sharpe", "sortino", "mdd", "calmar", "pct_positive"];

/// Standard deviations at or below this are treated as zero.
const ZERO_SD: f64 = 1e-14;

/// Allocations decided at the close of each date.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStream {
    pub dates: Vec<NaiveDate>,
    pub weights: Vec<Vec<f64>>,
}

impl WeightStream {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn push(&mut self, date: NaiveDate, weights: Vec<f64>) {
        self.dates.push(date);
        self.weights.push(weights);
    }

    pub fn extend(&mut self, other: WeightStream) {
        self.dates.extend(other.dates);
        self.weights.extend(other.weights);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquityCurve {
    dates: Vec<NaiveDate>,
    daily_returns: Vec<f64>,
    cumulative: Vec<f64>,
}

impl EquityCurve {
    pub fn new(dates: Vec<NaiveDate>, daily_returns: Vec<f64>) -> Result<Self> {
        if dates.len() != daily_returns.len() {
            return Err(Error::Contract(format!(
                "{} dates for {} returns",
                dates.len(),
                daily_returns.len()
            )));
        }
        if let Some((d, r)) = dates
            .iter()
            .zip(&daily_returns)
            .find(|(_, r)| !(r.is_finite() && **r > -1.0))
        {
            return Err(Error::Numeric(format!("daily return {r} on {d} is not above -1")));
        }
        let mut wealth = 1.0;
        let cumulative = daily_returns
            .iter()
            .map(|r| {
                wealth *= 1.0 + r;
                wealth
            })
            .collect();
        Ok(EquityCurve {
            dates,
            daily_returns,
            cumulative,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn daily_returns(&self) -> &[f64] {
        &self.daily_returns
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

fn serialize_metric<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("NaN")
    } else if *v > 0.0 {
        s.serialize_str("Infinity")
    } else {
        s.serialize_str("-Infinity")
    }
}

/// Summary metrics. Degenerate ratios are signed infinities (zero when the
/// numerator is zero too); JSON encodes infinities as `"Infinity"` strings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "serialize_metric")]
    pub returns: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub vol: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub sharpe: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub sortino: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub mdd: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub calmar: f64,
    #[serde(serialize_with = "serialize_metric")]
    pub pct_positive: f64,
}

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.returns,
            self.vol,
            self.sharpe,
            self.sortino,
            self.mdd,
            self.calmar,
            self.pct_positive,
        ]
    }

    /// Whether larger values of the named metric are better.
    pub fn higher_is_better(name: &str) -> bool {
        !matches!(name, "vol" | "mdd")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `num / den`, with a signed infinity (or zero) when `den` is zero.
fn ratio(num: f64, den: f64) -> f64 {
    if den > ZERO_SD {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn population_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn annualized_sharpe(x: &[f64]) -> f64 {
    ratio(mean(x), population_sd(x)) * TRADING_DAYS.sqrt()
}

/// Largest peak-to-trough decline of `curve` as a fraction of the peak.
pub fn max_drawdown(curve: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in curve {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    worst
}

/// The seven summary metrics. The drawdown is measured on the wealth path
/// starting from 1 before the first day.
pub fn compute_metrics(curve: &EquityCurve) -> Result<MetricsReport> {
    let r = curve.daily_returns();
    if r.len() < 2 {
        return Err(Error::Contract(format!(
            "metrics need at least 2 daily returns, got {}",
            r.len()
        )));
    }
    let m = mean(r);
    let sd = population_sd(r);
    let downside = (r.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    let wealth: Vec<f64> = std::iter::once(1.0).chain(curve.cumulative().iter().copied()).collect();
    let mdd = max_drawdown(&wealth);
    let returns = m * TRADING_DAYS;
    Ok(MetricsReport {
        returns,
        vol: sd * TRADING_DAYS.sqrt(),
        sharpe: ratio(m, sd) * TRADING_DAYS.sqrt(),
        sortino: ratio(m, downside) * TRADING_DAYS.sqrt(),
        mdd,
        calmar: ratio(returns, mdd),
        pct_positive: r.iter().filter(|&&v| v > 0.0).count() as f64 / r.len() as f64,
    })
}

/// Annualized Sharpe over each trailing `window` of days.
pub fn rolling_sharpe(curve: &EquityCurve, window: usize) -> Result<Vec<(NaiveDate, f64)>> {
    if window < 2 || curve.len() < window {
        return Err(Error::Contract(format!(
            "rolling window {window} needs at least 2 and at most {} days",
            curve.len()
        )));
    }
    let r = curve.daily_returns();
    Ok((window - 1..r.len())
        .map(|t| (curve.dates()[t], annualized_sharpe(&r[t + 1 - window..=t])))
        .collect())
}

/// Realized cost-adjusted returns of a weight stream. A weight dated `d`
/// earns the return of the trading day after `d`; the first day's turnover is
/// measured against an empty book.
pub fn run_backtest(stream: &WeightStream, table: &ReturnTable, costs: CostModel) -> Result<EquityCurve> {
    let n = table.n_assets();
    let mut prev = vec![0.0; n];
    let mut prev_idx: Option<usize> = None;
    let mut dates = Vec::with_capacity(stream.len());
    let mut returns = Vec::with_capacity(stream.len());
    for (date, w) in stream.dates.iter().zip(&stream.weights) {
        let misaligned = || Error::Alignment { date: date.to_string() };
        let idx = table.index_of(*date).ok_or_else(misaligned)?;
        if idx + 1 >= table.len() || prev_idx.is_some_and(|p| p + 1 != idx) {
            return Err(misaligned());
        }
        if w.len() != n {
            return Err(Error::shape("run_backtest", &[n], &[w.len()]));
        }
        let realized = table.row(idx + 1);
        let gross: f64 = w.iter().zip(realized).map(|(a, b)| a * b).sum();
        let turnover: f64 = w.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
        returns.push(gross - costs.rate * turnover);
        dates.push(table.dates()[idx + 1]);
        prev.clone_from(w);
        prev_idx = Some(idx);
    }
    EquityCurve::new(dates, returns)
}

/// Two-column `date,<value_name>` CSV.
pub fn write_series_csv(
    path: impl AsRef<Path>,
    value_name: &str,
    series: impl IntoIterator<Item = (NaiveDate, f64)>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "date,{value_name}")?;
    for (d, v) in series {
        writeln!(out, "{d},{v}")?;
    }
    out.flush()?;
    Ok(())
}
