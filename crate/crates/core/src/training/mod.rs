//! Optimization and the walk-forward protocol: Adam, mini-batches, early
//! stopping on a chronological validation holdout, random search over
//! hyperparameters, and yearly expanding-window retraining.

mod search;
mod walk;

pub use crate::data::{Split, WalkForwardSchedule};
pub use search::{random_grid_search, write_trials_csv, HyperparamSpace, Hyperparams, SearchOutcome, TrialRecord};
pub use walk::{walk_forward, Network, SplitOutcome, Strategy, WalkForwardConfig, WalkForwardResult};

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ReturnTable;
use crate::error::{Error, Result};
use crate::model::AllocationNetwork;
use crate::nn::{ParamStore, Session};
use crate::objective::{sharpe_loss, CostModel, ReturnsWindow};
use crate::tensor::Tensor;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update of every parameter in `params`.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        let p = params.get(id);
        if g.len() != p.len() || state.m[id.index()].len() != p.len() {
            return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = grads[i][k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub costs: CostModel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
            costs: CostModel::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// One training example: `2τ` days of history and the `τ` next-day returns
/// earned by the network's `τ` output rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub history: Tensor,
    pub window: ReturnsWindow,
}

/// Every stride-1 sample whose earned returns lie inside `earned`.
///
/// A sample ending at table row `e` uses history rows `e+1-2τ ..= e` and
/// earns rows `e+2-τ ..= e+1`.
pub fn make_samples(table: &ReturnTable, window: usize, earned: Range<usize>) -> Vec<Sample> {
    let end = earned.end.min(table.len());
    let first = (2 * window - 1).max((earned.start + window).saturating_sub(2));
    if end < 2 || end - 2 < first {
        return Vec::new();
    }
    (first..=end - 2)
        .map(|e| Sample {
            history: table.block(e + 1 - 2 * window, 2 * window),
            window: ReturnsWindow::new(table.block(e + 2 - window, window)),
        })
        .collect()
}

/// Shuffled index batches of `batch_size` (the last may be short).
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Contract("no windows to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Mean loss of `model` over `samples` in inference mode.
pub fn evaluate<M: AllocationNetwork>(model: &M, samples: &[Sample], costs: CostModel) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    for sample in samples {
        let mut s = Session::new(model.params());
        let w = model.weights(&mut s, &sample.history)?;
        let l = sharpe_loss(&mut s.tape, w, &sample.window, costs)?;
        total += s.value(l).item()?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses; epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub fn initial(&self) -> &EpochRecord {
        &self.epochs[0]
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Trains with one Adam step per mini-batch of mean Sharpe losses, keeping the
/// parameters of the epoch with the lowest validation loss.
///
/// Epoch losses are inference-mode means over the whole set, so they are
/// comparable across epochs and with the untrained epoch 0.
pub fn fit<M: AllocationNetwork>(
    model: &mut M,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs windows in both sets, got {} train and {} validation",
            train.len(),
            val.len()
        )));
    }
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_loss: evaluate(model, train, cfg.costs)?,
        val_loss: evaluate(model, val, cfg.costs)?,
    }];
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(train.len(), cfg.batch_size, mix_seed(cfg.seed, epoch as u64, 0))?;
        for (b, batch) in batches.iter().enumerate() {
            let dropout_seed = mix_seed(cfg.seed, epoch as u64, b as u64 + 1);
            let mut s = Session::training(model.params(), model.dropout(), dropout_seed);
            let mut total = None;
            for &i in batch {
                let w = model.weights(&mut s, &train[i].history)?;
                let l = sharpe_loss(&mut s.tape, w, &train[i].window, cfg.costs)?;
                total = Some(match total {
                    Some(acc) => s.tape.add(acc, l)?,
                    None => l,
                });
            }
            let total = total.expect("batches are non-empty");
            let loss = s.tape.scale(total, 1.0 / batch.len() as f64);
            let value = s.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss is {value} in epoch {epoch}, batch {b}")));
            }
            let grads = s.tape.backward(loss)?;
            let grads = s.param_grads(&grads);
            adam_step(model.params_mut(), &grads, &mut adam)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: evaluate(model, train, cfg.costs)?,
            val_loss: evaluate(model, val, cfg.costs)?,
        };
        if !record.val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss is {} in epoch {epoch}",
                record.val_loss
            )));
        }
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, l, _)| record.val_loss < *l) {
            best = Some((epoch, record.val_loss, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((epoch, _, params)) => {
            model.params_mut().copy_from(&params)?;
            epoch
        }
        None => 0,
    };
    Ok(History { epochs, best_epoch })
}
