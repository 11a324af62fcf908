use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PriceTable;
use crate::error::{Error, Result};

/// Seeded synthetic market. Each asset's daily return is
/// `drift + momentum * trailing_mean + vol * z`, where `trailing_mean` is the
/// asset's average return over the previous `momentum_lookback` days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_assets: usize,
    /// Number of price rows (trading days).
    pub n_days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub drift_range: (f64, f64),
    pub vol_range: (f64, f64),
    pub momentum: f64,
    pub momentum_lookback: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_assets: 4,
            n_days: 2000,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            drift_range: (-0.0002, 0.0004),
            vol_range: (0.008, 0.02),
            momentum: 0.0,
            momentum_lookback: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_assets == 0 {
            return bad("n_assets must be positive".into());
        }
        if self.n_days < 2 {
            return bad(format!("n_days must be at least 2, got {}", self.n_days));
        }
        let (vlo, vhi) = self.vol_range;
        if !(vlo > 0.0 && vhi >= vlo && vhi.is_finite()) {
            return bad(format!("volatility range {vlo}..{vhi} must be positive and ordered"));
        }
        let (dlo, dhi) = self.drift_range;
        if !(dhi >= dlo && dlo.is_finite() && dhi.is_finite()) {
            return bad(format!("drift range {dlo}..{dhi} must be ordered"));
        }
        if !(self.momentum.abs() < 1.0) {
            return bad(format!("momentum must be in (-1, 1), got {}", self.momentum));
        }
        if self.momentum_lookback == 0 {
            return bad("momentum_lookback must be positive".into());
        }
        Ok(())
    }
}

/// The first `n` Monday-to-Friday dates on or after `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<PriceTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_assets;
    let drift: Vec<f64> = (0..n).map(|_| uniform(&mut rng, cfg.drift_range)).collect();
    let vol: Vec<f64> = (0..n).map(|_| uniform(&mut rng, cfg.vol_range)).collect();

    let lookback = cfg.momentum_lookback;
    let mut history: Vec<Vec<f64>> = vec![vec![0.0; lookback]; n];
    let mut last = vec![100.0; n];
    let mut prices = Vec::with_capacity(cfg.n_days);
    prices.push(last.iter().map(|&p| Some(p)).collect::<Vec<_>>());
    for t in 1..cfg.n_days {
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let trailing = history[i].iter().sum::<f64>() / lookback as f64;
            let z: f64 = StandardNormal.sample(&mut rng);
            let r = (drift[i] + cfg.momentum * trailing + vol[i] * z).max(-0.95);
            history[i][t % lookback] = r;
            last[i] *= 1.0 + r;
            row.push(Some(last[i]));
        }
        prices.push(row);
    }
    Ok(PriceTable {
        dates: business_days(cfg.start_date, cfg.n_days),
        tickers: (0..n).map(|i| format!("SYN{i}")).collect(),
        prices,
    })
}
