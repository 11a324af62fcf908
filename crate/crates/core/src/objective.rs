//! Differentiable training objective: cost-adjusted portfolio returns and the
//! negative Sharpe ratio.
//!
//! Row `t` of a weight matrix is the allocation held over the next day, so it
//! earns row `t` of [`ReturnsWindow::realized`]. Turnover at row `t` is
//! measured against row `t - 1`, and against `prev_weights` (zero when absent)
//! at the first row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Floor on the return variance under the square root.
pub const SHARPE_EPS: f64 = 1e-12;

/// Proportional transaction cost per unit of turnover.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub rate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { rate: 0.0002 }
    }
}

impl CostModel {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Config(format!("cost rate must be >= 0, got {rate}")));
        }
        Ok(CostModel { rate })
    }

    pub fn free() -> Self {
        CostModel { rate: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnsWindow {
    /// `τ×N` next-day asset returns; row `t` is earned by weight row `t`.
    pub realized: Tensor,
    /// Holdings before the first row; `None` means a flat (all-zero) book.
    pub prev_weights: Option<Vec<f64>>,
}

impl ReturnsWindow {
    pub fn new(realized: Tensor) -> Self {
        ReturnsWindow {
            realized,
            prev_weights: None,
        }
    }

    pub fn with_prev(realized: Tensor, prev: Vec<f64>) -> Self {
        ReturnsWindow {
            realized,
            prev_weights: Some(prev),
        }
    }
}

/// `p_now / p_prev - 1`.
pub fn arithmetic_return(p_now: f64, p_prev: f64) -> Result<f64> {
    if !(p_prev > 0.0) {
        return Err(Error::Data(format!("previous price must be positive, got {p_prev}")));
    }
    Ok(p_now / p_prev - 1.0)
}

/// Per-row cost-adjusted returns, a length-`τ` vector.
pub fn portfolio_returns(tape: &mut Tape, weights: Var, window: &ReturnsWindow, costs: CostModel) -> Result<Var> {
    let shape = tape.shape(weights).to_vec();
    if shape != window.realized.shape() {
        return Err(Error::shape("portfolio_returns", &shape, window.realized.shape()));
    }
    let (rows, n) = (shape[0], shape[1]);
    let prev = match &window.prev_weights {
        Some(p) if p.len() != n => return Err(Error::shape("portfolio_returns", &[n], &[p.len()])),
        Some(p) => p.clone(),
        None => vec![0.0; n],
    };
    let realized = tape.constant(window.realized.clone());
    let earned = tape.mul(weights, realized)?;
    let gross = tape.sum_axis(earned, 1)?;
    if costs.rate == 0.0 {
        return Ok(gross);
    }
    let prev = tape.constant(Tensor::matrix(1, n, prev)?);
    let before = if rows > 1 {
        let head = tape.slice(weights, 0, 0, rows - 1)?;
        tape.concat(&[prev, head], 0)?
    } else {
        prev
    };
    let traded = tape.sub(weights, before)?;
    let traded = tape.abs(traded);
    let turnover = tape.sum_axis(traded, 1)?;
    let cost = tape.scale(turnover, costs.rate);
    tape.sub(gross, cost)
}

/// `E(R) / sqrt(max(E(R²) - E(R)², eps))` over a return vector, not annualized.
///
/// The floor only engages for (near-)constant return windows, where it keeps
/// the ratio finite and stops gradient flow through the variance.
pub fn sharpe(tape: &mut Tape, returns: Var) -> Result<Var> {
    let n = tape.value(returns).len();
    if n < 2 {
        return Err(Error::Contract(format!("sharpe needs at least 2 returns, got {n}")));
    }
    let mean = tape.mean(returns);
    let sq = tape.mul(returns, returns)?;
    let second = tape.mean(sq);
    let mean_sq = tape.mul(mean, mean)?;
    let var = tape.sub(second, mean_sq)?;
    let var = tape.clamp_min(var, SHARPE_EPS);
    let sd = tape.sqrt(var);
    tape.div(mean, sd)
}

/// Negative Sharpe ratio of the cost-adjusted returns earned by `weights`.
pub fn sharpe_loss(tape: &mut Tape, weights: Var, window: &ReturnsWindow, costs: CostModel) -> Result<Var> {
    let r = portfolio_returns(tape, weights, window, costs)?;
    let sr = sharpe(tape, r)?;
    Ok(tape.scale(sr, -1.0))
}

/// Sharpe ratio of plain values.
pub fn sharpe_of(returns: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.constant(Tensor::vector(returns.to_vec()));
    let s = sharpe(&mut tape, r)?;
    tape.value(s).item()
}

/// Cost-adjusted returns of fixed weights.
pub fn portfolio_returns_of(weights: &Tensor, window: &ReturnsWindow, costs: CostModel) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let w = tape.constant(weights.clone());
    let r = portfolio_returns(&mut tape, w, window, costs)?;
    Ok(tape.value(r).data().to_vec())
}

pub fn sharpe_loss_of(weights: &Tensor, window: &ReturnsWindow, costs: CostModel) -> Result<f64> {
    let mut tape = Tape::new();
    let w = tape.constant(weights.clone());
    let l = sharpe_loss(&mut tape, w, window, costs)?;
    tape.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{central_diff, lcg_values, max_rel_err};

    fn m(rows: usize, cols: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, d.to_vec()).unwrap()
    }

    #[test]
    fn arithmetic_return_cases() {
        assert!((arithmetic_return(102.0, 100.0).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(arithmetic_return(100.0, 100.0).unwrap(), 0.0);
        assert!((arithmetic_return(95.0, 100.0).unwrap() + 0.05).abs() < 1e-15);
        assert!(matches!(arithmetic_return(1.0, 0.0), Err(Error::Data(_))));
        assert!(arithmetic_return(1.0, -3.0).is_err());
    }

    #[test]
    fn portfolio_return_without_turnover() {
        let w = m(1, 2, &[0.5, -0.5]);
        let win = ReturnsWindow::with_prev(m(1, 2, &[0.02, 0.01]), vec![0.5, -0.5]);
        let r = portfolio_returns_of(&w, &win, CostModel::default()).unwrap();
        assert!((r[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn portfolio_return_with_turnover() {
        let w = m(1, 2, &[0.5, -0.5]);
        let win = ReturnsWindow::with_prev(m(1, 2, &[0.02, 0.01]), vec![0.3, -0.7]);
        let r = portfolio_returns_of(&w, &win, CostModel::new(0.0002).unwrap()).unwrap();
        assert!((r[0] - 0.00492).abs() < 1e-15);
    }

    #[test]
    fn zero_cost_is_plain_dot_product() {
        let w = lcg_values(1, 12, -0.5, 0.5);
        let r = lcg_values(2, 12, -0.03, 0.03);
        let win = ReturnsWindow::new(m(4, 3, &r));
        let got = portfolio_returns_of(&m(4, 3, &w), &win, CostModel::free()).unwrap();
        for t in 0..4 {
            let dot: f64 = (0..3).map(|i| w[t * 3 + i] * r[t * 3 + i]).sum();
            assert!((got[t] - dot).abs() < 1e-15);
        }
    }

    #[test]
    fn episode_start_charged_against_flat_book() {
        let w = m(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let win = ReturnsWindow::new(m(2, 2, &[0.0; 4]));
        let got = portfolio_returns_of(&w, &win, CostModel::default()).unwrap();
        assert!((got[0] + 0.0002).abs() < 1e-18);
        assert_eq!(got[1], 0.0);
    }

    #[test]
    fn sharpe_cases() {
        assert!((sharpe_of(&[0.01, 0.03]).unwrap() - 2.0).abs() < 1e-9);
        let c = 0.01;
        let s = sharpe_of(&[c, c, c]).unwrap();
        assert!(s.is_finite());
        assert!((s - c / SHARPE_EPS.sqrt()).abs() / s < 1e-12);
        let r = [0.01, -0.02, 0.015, 0.004];
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert!((sharpe_of(&r).unwrap() + sharpe_of(&neg).unwrap()).abs() < 1e-15);
        assert!(sharpe_of(&[0.1]).is_err());
    }

    #[test]
    fn loss_sign_and_scale() {
        let w = m(3, 2, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let pos = m(3, 2, &[0.01, 0.01, 0.02, 0.02, 0.015, 0.015]);
        let neg = pos.map(|v| -v);
        let lp = sharpe_loss_of(&w, &ReturnsWindow::new(pos.clone()), CostModel::free()).unwrap();
        let ln = sharpe_loss_of(&w, &ReturnsWindow::new(neg), CostModel::free()).unwrap();
        assert!(lp < ln);

        let w = m(3, 2, &[0.3, -0.7, -0.6, 0.4, 0.9, 0.1]);
        let base = m(3, 2, &[0.01, -0.02, 0.03, 0.005, -0.01, 0.02]);
        let l1 = sharpe_loss_of(&w, &ReturnsWindow::new(base.clone()), CostModel::free()).unwrap();
        for lambda in [0.1, 3.0, 17.0] {
            let scaled = base.map(|v| v * lambda);
            let l2 = sharpe_loss_of(&w, &ReturnsWindow::new(scaled), CostModel::free()).unwrap();
            assert!((l1 - l2).abs() < 1e-9, "{l1} vs {l2}");
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let w0 = lcg_values(7, 15, -0.4, 0.4);
        let realized = m(5, 3, &lcg_values(8, 15, -0.03, 0.03));
        let win = ReturnsWindow::with_prev(realized, vec![0.2, -0.3, 0.5]);
        let costs = CostModel::new(0.001).unwrap();
        let mut tape = Tape::new();
        let w = tape.leaf(m(5, 3, &w0), true);
        let l = sharpe_loss(&mut tape, w, &win, costs).unwrap();
        let analytic = tape.backward(l).unwrap().get(w).unwrap().to_vec();
        let numeric = central_diff(|p| sharpe_loss_of(&m(5, 3, p), &win, costs).unwrap(), &w0, 1e-5);
        assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = m(2, 2, &[0.5; 4]);
        let win = ReturnsWindow::new(m(2, 3, &[0.0; 6]));
        assert!(matches!(
            portfolio_returns_of(&w, &win, CostModel::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn negative_cost_rejected() {
        assert!(CostModel::new(-1e-4).is_err());
    }
}
