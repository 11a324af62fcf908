//! Baseline strategies: mean-variance, equal weight, and two neural networks
//! (LSTM and MLP) that share the transformer's output head and training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{allocation_head, check_history, rows_of, AllocationNetwork, Checkpoint};
use crate::nn::{init_weight, Dense, ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};

/// `1/N` in every asset.
pub fn equal_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvConfig {
    pub lookback: usize,
    /// Diagonal loading, relative to the average asset variance.
    pub ridge: f64,
}

impl Default for MvConfig {
    fn default() -> Self {
        MvConfig {
            lookback: 50,
            ridge: 1e-6,
        }
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if !(a[pivot][col].abs() > scale * 1e-15) {
            return Err(Error::Numeric("covariance matrix is singular".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (top, below) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (offset, r) in below.iter_mut().enumerate() {
            let f = r[col] / pivot_row[col];
            for (x, p) in r[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[col + 1 + offset] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// `Σ⁻¹μ` scaled to unit gross exposure; equal weights if it is zero.
pub fn tangency_weights(mu: &[f64], cov: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = mu.len();
    if cov.len() != n || cov.iter().any(|r| r.len() != n) {
        return Err(Error::shape(
            "tangency_weights",
            &[n, n],
            &[cov.len(), cov.first().map_or(0, Vec::len)],
        ));
    }
    let raw = solve(cov.to_vec(), mu.to_vec())?;
    let gross: f64 = raw.iter().map(|v| v.abs()).sum();
    if !gross.is_finite() {
        return Err(Error::Numeric("tangency weights are not finite".into()));
    }
    if gross == 0.0 {
        return Ok(equal_weights(n));
    }
    Ok(raw.iter().map(|v| v / gross).collect())
}

/// Sample mean and covariance (divisor `T - 1`) of the rows of `returns`.
pub fn mean_and_covariance(returns: &Tensor) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (t, n) = returns.require_matrix("mean_and_covariance")?;
    if t < 2 {
        return Err(Error::Contract(format!("covariance needs at least 2 rows, got {t}")));
    }
    let mu: Vec<f64> = (0..n)
        .map(|i| (0..t).map(|r| returns.at(r, i)).sum::<f64>() / t as f64)
        .collect();
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let c = (0..t)
                .map(|r| (returns.at(r, i) - mu[i]) * (returns.at(r, j) - mu[j]))
                .sum::<f64>()
                / (t - 1) as f64;
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }
    Ok((mu, cov))
}

/// Mean-variance (tangency) allocation from the last `lookback` rows.
pub fn mv_weights(history: &Tensor, cfg: &MvConfig) -> Result<Vec<f64>> {
    let (t, n) = history.require_matrix("mv_weights")?;
    if cfg.lookback < 2 || t < cfg.lookback {
        return Err(Error::Contract(format!(
            "mean-variance needs {} rows of history, got {t}",
            cfg.lookback.max(2)
        )));
    }
    if !(cfg.ridge > 0.0) {
        return Err(Error::Config(format!("ridge must be positive, got {}", cfg.ridge)));
    }
    let (mu, mut cov) = mean_and_covariance(&rows_of(history, t - cfg.lookback, cfg.lookback))?;
    let avg_var = (0..n).map(|i| cov[i][i]).sum::<f64>() / n as f64;
    let load = if avg_var > 0.0 { cfg.ridge * avg_var } else { cfg.ridge };
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += load;
    }
    tangency_weights(&mu, &cov)
}

/// Size and regularization of a benchmark network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_assets: usize,
    pub window: usize,
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

fn default_layers() -> usize {
    2
}

impl BenchmarkConfig {
    pub fn new(n_assets: usize, window: usize, hidden: usize) -> Self {
        BenchmarkConfig {
            n_assets,
            window,
            hidden,
            n_layers: default_layers(),
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 || self.window == 0 || self.hidden == 0 || self.n_layers == 0 {
            return Err(Error::Config(format!("benchmark sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Single-layer LSTM over daily returns with a dense score map per step.
#[derive(Clone, Debug)]
pub struct LstmModel {
    config: BenchmarkConfig,
    params: ParamStore,
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
    head: Dense,
}

impl LstmModel {
    pub fn new(config: BenchmarkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let (n, h) = (config.n_assets, config.hidden);
        let w_input = p.add("lstm.w_input", init_weight(&mut rng, n, 4 * h));
        let w_hidden = p.add("lstm.w_hidden", init_weight(&mut rng, h, 4 * h));
        let bias = p.add("lstm.bias", Tensor::zeros(&[1, 4 * h]));
        let head = Dense::new(&mut p, &mut rng, "head", h, n);
        Ok(LstmModel {
            config,
            params: p,
            w_input,
            w_hidden,
            bias,
            head,
        })
    }

    pub fn config(&self) -> &BenchmarkConfig {
        &self.config
    }

    /// Hidden state after every row of `x` (`T×N` in, `T×H` out), starting
    /// from zero state. Gate order in the packed weights: input, forget,
    /// candidate, output.
    pub fn hidden_states(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.n_assets {
            return Err(Error::shape("lstm_forward", &shape, &[shape[0], self.config.n_assets]));
        }
        let h_dim = self.config.hidden;
        let wx = s.param(self.w_input);
        let wh = s.param(self.w_hidden);
        let b = s.param(self.bias);
        let projected = s.tape.matmul(x, wx)?;
        let projected = s.tape.add_row(projected, b)?;
        let mut h = s.input(Tensor::zeros(&[1, h_dim]));
        let mut c = s.input(Tensor::zeros(&[1, h_dim]));
        let mut states = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let xt = s.tape.slice(projected, 0, t, 1)?;
            let rec = s.tape.matmul(h, wh)?;
            let z = s.tape.add(xt, rec)?;
            let gate = |s: &mut Session, k: usize| s.tape.slice(z, 1, k * h_dim, h_dim);
            let i = gate(s, 0)?;
            let i = s.tape.sigmoid(i);
            let f = gate(s, 1)?;
            let f = s.tape.sigmoid(f);
            let g = gate(s, 2)?;
            let g = s.tape.tanh(g);
            let o = gate(s, 3)?;
            let o = s.tape.sigmoid(o);
            let keep = s.tape.mul(f, c)?;
            let write = s.tape.mul(i, g)?;
            c = s.tape.add(keep, write)?;
            let squashed = s.tape.tanh(c);
            h = s.tape.mul(o, squashed)?;
            states.push(h);
        }
        s.tape.concat(&states, 0)
    }

    /// Weights for every row of `x`; row `t` depends only on rows `..=t`.
    pub fn forward_sequence(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.hidden_states(s, x)?;
        let h = s.dropout(h)?;
        let scores = self.head.forward(s, h)?;
        allocation_head(s, scores)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        from_checkpoint(ckpt, "lstm", LstmModel::new)
    }
}

fn from_checkpoint<M: AllocationNetwork>(
    ckpt: &Checkpoint,
    kind: &str,
    build: impl Fn(BenchmarkConfig) -> Result<M>,
) -> Result<M> {
    if ckpt.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            ckpt.kind
        )));
    }
    let config: BenchmarkConfig = serde_json::from_value(ckpt.config.clone())?;
    let mut model = build(config)?;
    model.params_mut().copy_from(&ckpt.param_store()?)?;
    Ok(model)
}

impl AllocationNetwork for LstmModel {
    fn kind(&self) -> &'static str {
        "lstm"
    }

    fn window(&self) -> usize {
        self.config.window
    }

    fn n_assets(&self) -> usize {
        self.config.n_assets
    }

    fn dropout(&self) -> f64 {
        self.config.dropout
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Runs over the whole `2τ` history and keeps the last `τ` rows.
    fn weights(&self, s: &mut Session, history: &Tensor) -> Result<Var> {
        let w = self.config.window;
        check_history(history, w, self.config.n_assets)?;
        let x = s.input(history.clone());
        let all = self.forward_sequence(s, x)?;
        s.tape.slice(all, 0, w, w)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "lstm",
            self.config.seed,
            serde_json::to_value(&self.config).expect("config serializes"),
            &self.params,
        )
    }
}

/// Dense network on the flattened `τ×N` lookback window.
#[derive(Clone, Debug)]
pub struct MlpModel {
    config: BenchmarkConfig,
    params: ParamStore,
    hidden: Vec<Dense>,
    head: Dense,
}

impl MlpModel {
    pub fn new(config: BenchmarkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let mut fan_in = config.window * config.n_assets;
        let hidden = (0..config.n_layers)
            .map(|i| {
                let layer = Dense::new(&mut p, &mut rng, &format!("hidden{i}"), fan_in, config.hidden);
                fan_in = config.hidden;
                layer
            })
            .collect();
        let head = Dense::new(&mut p, &mut rng, "head", fan_in, config.n_assets);
        Ok(MlpModel {
            config,
            params: p,
            hidden,
            head,
        })
    }

    pub fn config(&self) -> &BenchmarkConfig {
        &self.config
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Weights for each row of `x`, an `M×(τN)` matrix of flattened windows.
    pub fn forward_flat(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut y = x;
        for layer in &self.hidden {
            y = layer.forward(s, y)?;
            y = s.tape.elu(y);
            y = s.dropout(y)?;
        }
        let scores = self.head.forward(s, y)?;
        allocation_head(s, scores)
    }

    /// Weights `1×N` from a single `τ×N` window.
    pub fn forward_window(&self, s: &mut Session, window: &Tensor) -> Result<Var> {
        let (w, n) = (self.config.window, self.config.n_assets);
        if window.shape() != [w, n] {
            return Err(Error::shape("mlp_forward", window.shape(), &[w, n]));
        }
        let x = s.input(Tensor::matrix(1, w * n, window.data().to_vec())?);
        self.forward_flat(s, x)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        from_checkpoint(ckpt, "mlp", MlpModel::new)
    }
}

/// Row `j` is history rows `j+1 ..= j+τ` flattened, the window ending at the
/// day of decision `j`.
pub fn lookback_matrix(history: &Tensor, window: usize) -> Tensor {
    let n = history.cols();
    let width = window * n;
    let mut data = Vec::with_capacity(window * width);
    for j in 0..window {
        data.extend_from_slice(&history.data()[(j + 1) * n..(j + 1 + window) * n]);
    }
    Tensor::matrix(window, width, data).expect("lookback dims")
}

impl AllocationNetwork for MlpModel {
    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn window(&self) -> usize {
        self.config.window
    }

    fn n_assets(&self) -> usize {
        self.config.n_assets
    }

    fn dropout(&self) -> f64 {
        self.config.dropout
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn weights(&self, s: &mut Session, history: &Tensor) -> Result<Var> {
        let w = self.config.window;
        check_history(history, w, self.config.n_assets)?;
        let x = s.input(lookback_matrix(history, w));
        self.forward_flat(s, x)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "mlp",
            self.config.seed,
            serde_json::to_value(&self.config).expect("config serializes"),
            &self.params,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{sharpe_loss, CostModel, ReturnsWindow};
    use crate::test_util::{check_param_grads, lcg_values};

    fn m(rows: usize, cols: usize, d: Vec<f64>) -> Tensor {
        Tensor::matrix(rows, cols, d).unwrap()
    }

    #[test]
    fn tangency_hand_case() {
        let w = tangency_weights(&[0.1, 0.05], &[vec![0.04, 0.0], vec![0.0, 0.01]]).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            tangency_weights(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            [0.5, 0.5]
        );
        assert!(tangency_weights(&[1.0, 1.0], &[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn mv_symmetric_assets_get_equal_weights() {
        // Each column is a permutation of the same values, so every asset
        // has identical mean and variance; cross-covariances are symmetric.
        let base = [0.01, -0.02, 0.03, 0.0];
        let rows: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |c| base[(r + c) % 4])).collect();
        let w = mv_weights(
            &m(4, 4, rows),
            &MvConfig {
                lookback: 4,
                ridge: 1e-6,
            },
        )
        .unwrap();
        for v in &w {
            assert!((v - 0.25).abs() < 1e-9, "{w:?}");
        }
    }

    #[test]
    fn mv_zero_mean_falls_back_to_equal() {
        let h = m(4, 2, vec![0.01, -0.02, -0.01, 0.02, 0.01, -0.02, -0.01, 0.02]);
        assert_eq!(
            mv_weights(
                &h,
                &MvConfig {
                    lookback: 4,
                    ridge: 1e-6
                }
            )
            .unwrap(),
            [0.5, 0.5]
        );
    }

    #[test]
    fn mv_is_scale_invariant_and_uses_trailing_rows() {
        let data = lcg_values(4, 60 * 3, -0.02, 0.025);
        let h = m(60, 3, data.clone());
        let cfg = MvConfig::default();
        let w = mv_weights(&h, &cfg).unwrap();
        assert!((w.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        for lambda in [0.01, 7.0] {
            let wl = mv_weights(&h.map(|v| v * lambda), &cfg).unwrap();
            for (a, b) in w.iter().zip(&wl) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let mut changed = data;
        changed[0] = 0.5;
        assert_eq!(mv_weights(&m(60, 3, changed), &cfg).unwrap(), w);
        assert!(mv_weights(&m(10, 3, vec![0.0; 30]), &cfg).is_err());
    }

    fn tiny() -> BenchmarkConfig {
        BenchmarkConfig {
            seed: 11,
            ..BenchmarkConfig::new(3, 4, 5)
        }
    }

    fn history(seed: u64) -> Tensor {
        m(8, 3, lcg_values(seed, 24, -0.05, 0.05))
    }

    fn gross_is_one(w: &Tensor) {
        for r in 0..w.rows() {
            let g: f64 = w.row(r).iter().map(|v| v.abs()).sum();
            assert!((g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_zero_parameters_give_constant_weights() {
        let mut model = LstmModel::new(tiny()).unwrap();
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            model.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let head_bias = model.head.bias;
        model
            .params_mut()
            .get_mut(head_bias)
            .data_mut()
            .copy_from_slice(&[0.5, -1.0, 0.0]);
        let mut s = Session::new(model.params());
        let x = s.input(history(1));
        let h = model.hidden_states(&mut s, x).unwrap();
        assert!(s.value(h).data().iter().all(|&v| v == 0.0));
        let w = model.forward_sequence(&mut s, x).unwrap();
        let w = s.value(w);
        for r in 1..w.rows() {
            assert_eq!(w.row(r), w.row(0));
        }
        assert!(w.row(0)[1] < 0.0);
    }

    #[test]
    fn lstm_is_causal() {
        let model = LstmModel::new(tiny()).unwrap();
        let x = history(2);
        let run = |x: &Tensor| {
            let mut s = Session::new(model.params());
            let v = s.input(x.clone());
            let w = model.forward_sequence(&mut s, v).unwrap();
            s.value(w).clone()
        };
        let base = run(&x);
        gross_is_one(&base);
        for j in 0..8 {
            let mut y = x.clone();
            y.data_mut()[j * 3 + 1] += 0.3;
            let out = run(&y);
            for r in 0..8 {
                let same = out.row(r) == base.row(r);
                assert_eq!(same, r < j, "row {r}, perturbed {j}");
            }
        }
    }

    #[test]
    fn lstm_gradient_check() {
        let model = LstmModel::new(tiny()).unwrap();
        let h = m(8, 3, lcg_values(3, 24, -1.0, 1.0));
        let realized = ReturnsWindow::new(m(4, 3, lcg_values(5, 12, -0.03, 0.03)));
        check_param_grads(
            model.params(),
            |s| {
                let w = model.weights(s, &h).unwrap();
                sharpe_loss(&mut s.tape, w, &realized, CostModel::default()).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn mlp_head_contract_and_zero_head() {
        let mut model = MlpModel::new(tiny()).unwrap();
        for seed in 0..20 {
            let mut s = Session::new(model.params());
            let w = model.weights(&mut s, &history(seed)).unwrap();
            gross_is_one(s.value(w));
        }
        let head_w = model.head().weight;
        model.params_mut().get_mut(head_w).data_mut().fill(0.0);
        let mut s = Session::new(model.params());
        let w = model
            .forward_window(&mut s, &m(4, 3, lcg_values(9, 12, -1.0, 1.0)))
            .unwrap();
        for v in s.value(w).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_rows_use_their_own_lookback() {
        let model = MlpModel::new(tiny()).unwrap();
        let h = history(4);
        let mut s = Session::new(model.params());
        let all = model.weights(&mut s, &h).unwrap();
        let all = s.value(all).clone();
        for j in 0..4 {
            let mut s = Session::new(model.params());
            let w = model.forward_window(&mut s, &rows_of(&h, j + 1, 4)).unwrap();
            assert_eq!(s.value(w).data(), all.row(j));
        }
        assert_eq!(model.predict_next(&h).unwrap(), all.row(3));
    }

    #[test]
    fn mlp_gradient_check() {
        let model = MlpModel::new(tiny()).unwrap();
        let h = history(6);
        let realized = ReturnsWindow::new(m(4, 3, lcg_values(7, 12, -0.03, 0.03)));
        check_param_grads(
            model.params(),
            |s| {
                let w = model.weights(s, &h).unwrap();
                sharpe_loss(&mut s.tape, w, &realized, CostModel::default()).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn benchmark_checkpoints_round_trip() {
        let lstm = LstmModel::new(tiny()).unwrap();
        let back = LstmModel::from_checkpoint(&lstm.to_checkpoint()).unwrap();
        assert_eq!(back.params(), lstm.params());
        let mlp = MlpModel::new(tiny()).unwrap();
        assert!(LstmModel::from_checkpoint(&mlp.to_checkpoint()).is_err());
        let back = MlpModel::from_checkpoint(&mlp.to_checkpoint()).unwrap();
        assert_eq!(back.params(), mlp.params());
    }
}
