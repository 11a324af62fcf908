//! Reference implementations written independently of the library, used as
//! oracles by the integration tests.

#![allow(dead_code)]

pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Small xorshift generator so the oracles share no randomness code with
/// the library.
pub struct Xorshift(u64);

impl Xorshift {
    pub fn new(seed: u64) -> Self {
        Xorshift(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) | 1)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}

/// Negative Sharpe of cost-adjusted portfolio returns, straight from the
/// definitions with plain loops. `w` and `r` are row-major `rows × n`.
pub fn reference_sharpe_loss(w: &[f64], r: &[f64], prev: &[f64], n: usize, cost: f64) -> f64 {
    let rows = w.len() / n;
    let mut daily = Vec::with_capacity(rows);
    for t in 0..rows {
        let mut gross = 0.0;
        let mut turnover = 0.0;
        for i in 0..n {
            gross += w[t * n + i] * r[t * n + i];
            let before = if t == 0 { prev[i] } else { w[(t - 1) * n + i] };
            turnover += (w[t * n + i] - before).abs();
        }
        daily.push(gross - cost * turnover);
    }
    let count = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / count;
    let second = daily.iter().map(|x| x * x).sum::<f64>() / count;
    let var = (second - mean * mean).max(1e-12);
    -mean / var.sqrt()
}

pub struct ReferenceMetrics {
    pub returns: f64,
    pub vol: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub mdd: f64,
    pub calmar: f64,
    pub pct_positive: f64,
}

/// Annualized metrics of a daily return stream. The wealth path starts at 1.
pub fn reference_metrics(r: &[f64]) -> ReferenceMetrics {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let mut ss = 0.0;
    let mut down = 0.0;
    let mut positive = 0usize;
    for &x in r {
        ss += (x - mean).powi(2);
        if x < 0.0 {
            down += x * x;
        }
        if x > 0.0 {
            positive += 1;
        }
    }
    let sd = (ss / n).sqrt();
    let dd = (down / n).sqrt();
    let mut wealth = 1.0f64;
    let mut peak = 1.0f64;
    let mut mdd = 0.0f64;
    for &x in r {
        wealth *= 1.0 + x;
        if wealth > peak {
            peak = wealth;
        }
        let drop = 1.0 - wealth / peak;
        if drop > mdd {
            mdd = drop;
        }
    }
    let ann = 252f64.sqrt();
    ReferenceMetrics {
        returns: mean * 252.0,
        vol: sd * ann,
        sharpe: mean / sd * ann,
        sortino: mean / dd * ann,
        mdd,
        calmar: mean * 252.0 / mdd,
        pct_positive: positive as f64 / n,
    }
}
