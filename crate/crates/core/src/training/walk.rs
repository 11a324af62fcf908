use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::search::{random_grid_search, HyperparamSpace, Hyperparams, TrialRecord};
use super::{fit, make_samples, History, TrainConfig};
use crate::benchmarks::{equal_weights, mv_weights, BenchmarkConfig, LstmModel, MlpModel, MvConfig};
use crate::data::{yearly_splits, ReturnTable, Split, WalkForwardSchedule};
use crate::error::{Error, Result};
use crate::metrics::WeightStream;
use crate::model::{AllocationNetwork, Checkpoint, PortfolioTransformer, PtConfig};
use crate::nn::{ParamStore, Session};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pt,
    Lstm,
    Mlp,
    Mv,
    EqualWeight,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Pt,
        Strategy::Lstm,
        Strategy::Mlp,
        Strategy::Mv,
        Strategy::EqualWeight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Pt => "pt",
            Strategy::Lstm => "lstm",
            Strategy::Mlp => "mlp",
            Strategy::Mv => "mv",
            Strategy::EqualWeight => "equal_weight",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Strategy::Pt | Strategy::Lstm | Strategy::Mlp)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Strategy::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Any trainable strategy.
#[derive(Clone, Debug)]
pub enum Network {
    Pt(PortfolioTransformer),
    Lstm(LstmModel),
    Mlp(MlpModel),
}

impl Network {
    /// LSTM and MLP use `d_model` as their hidden width and ignore the
    /// attention-specific settings.
    pub fn build(
        strategy: Strategy,
        hp: &Hyperparams,
        n_assets: usize,
        window: usize,
        n_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        let bench = || BenchmarkConfig {
            dropout: hp.dropout,
            seed,
            ..BenchmarkConfig::new(n_assets, window, hp.d_model)
        };
        Ok(match strategy {
            Strategy::Pt => {
                let mut c = PtConfig::new(n_assets, window, hp.d_model, hp.n_heads, hp.t2v_k);
                c.n_layers = n_layers;
                c.dropout = hp.dropout;
                c.seed = seed;
                Network::Pt(PortfolioTransformer::new(c)?)
            }
            Strategy::Lstm => Network::Lstm(LstmModel::new(bench())?),
            Strategy::Mlp => Network::Mlp(MlpModel::new(bench())?),
            other => {
                return Err(Error::Config(format!("{other} is not a trainable strategy")));
            }
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.kind.as_str() {
            "pt" => Ok(Network::Pt(PortfolioTransformer::from_checkpoint(ckpt)?)),
            "lstm" => Ok(Network::Lstm(LstmModel::from_checkpoint(ckpt)?)),
            "mlp" => Ok(Network::Mlp(MlpModel::from_checkpoint(ckpt)?)),
            other => Err(Error::Checkpoint(format!("unknown network kind {other:?}"))),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Network::Pt($m) => $e,
            Network::Lstm($m) => $e,
            Network::Mlp($m) => $e,
        }
    };
}

impl AllocationNetwork for Network {
    fn kind(&self) -> &'static str {
        delegate!(self, m => m.kind())
    }

    fn window(&self) -> usize {
        delegate!(self, m => m.window())
    }

    fn n_assets(&self) -> usize {
        delegate!(self, m => m.n_assets())
    }

    fn dropout(&self) -> f64 {
        delegate!(self, m => m.dropout())
    }

    fn params(&self) -> &ParamStore {
        delegate!(self, m => m.params())
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        delegate!(self, m => m.params_mut())
    }

    fn weights(&self, s: &mut Session, history: &Tensor) -> Result<Var> {
        delegate!(self, m => m.weights(s, history))
    }

    fn to_checkpoint(&self) -> Checkpoint {
        delegate!(self, m => m.to_checkpoint())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardConfig {
    pub strategy: Strategy,
    pub first_test_year: i32,
    pub window: usize,
    pub n_layers: usize,
    pub space: HyperparamSpace,
    /// Epochs, patience, validation fraction and cost model; batch size and
    /// learning rate come from the search.
    pub train: TrainConfig,
    pub mv: MvConfig,
    pub seed: u64,
    pub jobs: usize,
    /// Search at every split, or only at the first and reuse the winner.
    pub search_every_split: bool,
}

impl WalkForwardConfig {
    pub fn new(strategy: Strategy, first_test_year: i32) -> Self {
        WalkForwardConfig {
            strategy,
            first_test_year,
            window: 20,
            n_layers: 4,
            space: HyperparamSpace::default(),
            train: TrainConfig::default(),
            mv: MvConfig::default(),
            seed: 0,
            jobs: 1,
            search_every_split: true,
        }
    }
}

pub struct SplitOutcome {
    pub split: Split,
    pub best: Option<Hyperparams>,
    pub history: Option<History>,
    pub trials: Vec<TrialRecord>,
    pub model: Option<Network>,
}

pub struct WalkForwardResult {
    pub schedule: WalkForwardSchedule,
    pub weights: WeightStream,
    pub splits: Vec<SplitOutcome>,
}

/// Lookback rows a strategy needs before its first decision.
fn required_history(cfg: &WalkForwardConfig) -> usize {
    match cfg.strategy {
        Strategy::Mv => cfg.mv.lookback,
        Strategy::EqualWeight => 0,
        _ => 2 * cfg.window,
    }
}

/// Yearly expanding-window backtest. For each split the strategy is fitted
/// on the training rows, then decides at the close of each day from the last
/// training day up to the day before the last test day; the weight decided
/// on day `d` earns day `d + 1`.
pub fn walk_forward(table: &ReturnTable, cfg: &WalkForwardConfig) -> Result<WalkForwardResult> {
    cfg.train.validate()?;
    let schedule = yearly_splits(table, cfg.first_test_year, cfg.train.validation_fraction)?;
    let need = required_history(cfg);
    let first_test = schedule.splits[0].test.start;
    if first_test < need {
        return Err(Error::Data(format!(
            "{} needs {need} days of history before the first test day, found {first_test}",
            cfg.strategy
        )));
    }
    let n = table.n_assets();
    let mut weights = WeightStream::default();
    let mut outcomes = Vec::with_capacity(schedule.len());
    let mut reused: Option<(usize, Hyperparams)> = None;

    for (k, split) in schedule.splits.iter().enumerate() {
        let mut outcome = SplitOutcome {
            split: split.clone(),
            best: None,
            history: None,
            trials: Vec::new(),
            model: None,
        };
        if cfg.strategy.is_trained() {
            let train = make_samples(table, cfg.window, split.fit_rows());
            let val = make_samples(table, cfg.window, split.val.clone());
            if train.is_empty() || val.is_empty() {
                return Err(Error::Data(format!(
                    "split {}: {} training and {} validation windows of {} days",
                    split.test_year,
                    train.len(),
                    val.len(),
                    cfg.window
                )));
            }
            let build =
                |hp: &Hyperparams, seed: u64| Network::build(cfg.strategy, hp, n, cfg.window, cfg.n_layers, seed);
            let split_seed = cfg.seed.wrapping_add(1_000_003 * k as u64);
            match &reused {
                Some((index, hp)) if !cfg.search_every_split => {
                    let trial_seed = split_seed.wrapping_add(*index as u64);
                    let mut model = build(hp, trial_seed)?;
                    let train_cfg = TrainConfig {
                        batch_size: hp.batch_size,
                        learning_rate: hp.learning_rate,
                        seed: trial_seed,
                        ..cfg.train.clone()
                    };
                    outcome.history = Some(fit(&mut model, &train, &val, &train_cfg)?);
                    outcome.best = Some(hp.clone());
                    outcome.model = Some(model);
                }
                _ => {
                    let found = random_grid_search(&cfg.space, build, &train, &val, &cfg.train, split_seed, cfg.jobs)?;
                    reused = Some((found.best_index, found.best.clone()));
                    outcome.best = Some(found.best);
                    outcome.history = Some(found.history);
                    outcome.trials = found.trials;
                    outcome.model = Some(found.model);
                }
            }
        }
        for day in split.test.clone() {
            let decision = day - 1;
            let w = match (cfg.strategy, &outcome.model) {
                (Strategy::EqualWeight, _) => equal_weights(n),
                (Strategy::Mv, _) => mv_weights(&table.block(0, decision + 1), &cfg.mv)?,
                (_, Some(model)) => {
                    let history = table.block(decision + 1 - 2 * cfg.window, 2 * cfg.window);
                    model.predict_next(&history)?
                }
                (_, None) => unreachable!("trained strategies always hold a model"),
            };
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite weights on {}",
                    table.dates()[decision]
                )));
            }
            weights.push(table.dates()[decision], w);
        }
        outcomes.push(outcome);
    }
    Ok(WalkForwardResult {
        schedule,
        weights,
        splits: outcomes,
    })
}
