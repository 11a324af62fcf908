use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, History, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::model::AllocationNetwork;

/// One point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub d_model: usize,
    pub n_heads: usize,
    pub t2v_k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
}

impl Hyperparams {
    pub fn is_valid(&self) -> bool {
        self.d_model >= 1
            && self.n_heads >= 1
            && self.d_model.is_multiple_of(self.n_heads)
            && self.t2v_k >= 1
            && self.batch_size >= 1
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.dropout)
    }
}

/// Candidate values per hyperparameter. Loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparamSpace {
    pub d_model: Vec<usize>,
    pub n_heads: Vec<usize>,
    pub t2v_k: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub budget: usize,
}

impl Default for HyperparamSpace {
    fn default() -> Self {
        HyperparamSpace {
            d_model: vec![8, 16, 32],
            n_heads: vec![1, 2, 4],
            t2v_k: vec![2, 4, 8],
            batch_size: vec![32, 64, 128],
            learning_rate: vec![1e-3, 3e-3, 1e-2],
            dropout: vec![0.0, 0.1, 0.2],
            budget: 100,
        }
    }
}

impl HyperparamSpace {
    /// A space holding exactly `hp`.
    pub fn single(hp: &Hyperparams) -> Self {
        HyperparamSpace {
            d_model: vec![hp.d_model],
            n_heads: vec![hp.n_heads],
            t2v_k: vec![hp.t2v_k],
            batch_size: vec![hp.batch_size],
            learning_rate: vec![hp.learning_rate],
            dropout: vec![hp.dropout],
            budget: 1,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let space: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    fn axes_len(&self) -> [usize; 6] {
        [
            self.d_model.len(),
            self.n_heads.len(),
            self.t2v_k.len(),
            self.batch_size.len(),
            self.learning_rate.len(),
            self.dropout.len(),
        ]
    }

    fn point(&self, idx: [usize; 6]) -> Hyperparams {
        Hyperparams {
            d_model: self.d_model[idx[0]],
            n_heads: self.n_heads[idx[1]],
            t2v_k: self.t2v_k[idx[2]],
            batch_size: self.batch_size[idx[3]],
            learning_rate: self.learning_rate[idx[4]],
            dropout: self.dropout[idx[5]],
        }
    }

    /// Every valid point of the cross-product.
    pub fn combinations(&self) -> Vec<Hyperparams> {
        let lens = self.axes_len();
        let total: usize = lens.iter().product();
        (0..total)
            .map(|mut flat| {
                let mut idx = [0; 6];
                for (axis, len) in lens.iter().enumerate().rev() {
                    idx[axis] = flat % len;
                    flat /= len;
                }
                self.point(idx)
            })
            .filter(Hyperparams::is_valid)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes_len().contains(&0) {
            return Err(Error::Config(
                "every hyperparameter needs at least one candidate".into(),
            ));
        }
        if self.budget == 0 {
            return Err(Error::Config("search budget must be at least 1".into()));
        }
        if self.combinations().is_empty() {
            return Err(Error::Config("no valid hyperparameter combination in the space".into()));
        }
        Ok(())
    }

    /// `budget` points drawn with replacement, each axis uniform; draws that
    /// violate a model invariant are redrawn.
    pub fn sample(&self, seed: u64) -> Result<Vec<Hyperparams>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = self.axes_len();
        let mut out = Vec::with_capacity(self.budget);
        while out.len() < self.budget {
            let idx = lens.map(|len| rng.gen_range(0..len));
            let hp = self.point(idx);
            if hp.is_valid() {
                out.push(hp);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: Hyperparams,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

pub struct SearchOutcome<M> {
    pub best_index: usize,
    pub best: Hyperparams,
    pub model: M,
    pub history: History,
    pub trials: Vec<TrialRecord>,
}

/// Trains one model per sampled point and keeps the one with the lowest
/// best-epoch validation loss (earliest trial on ties).
///
/// Trial `i` builds its model and trains with seed `seed + i`. With
/// `jobs > 1` trials run on a thread pool; results do not depend on `jobs`.
pub fn random_grid_search<M, B>(
    space: &HyperparamSpace,
    build: B,
    train: &[Sample],
    val: &[Sample],
    base: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<SearchOutcome<M>>
where
    M: AllocationNetwork,
    B: Fn(&Hyperparams, u64) -> Result<M> + Sync,
{
    let points = space.sample(seed)?;
    let run = |(i, hp): (usize, &Hyperparams)| -> Result<(TrialRecord, Option<(M, History)>)> {
        let started = Instant::now();
        let trial_seed = seed.wrapping_add(i as u64);
        let mut model = build(hp, trial_seed)?;
        let cfg = TrainConfig {
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            seed: trial_seed,
            ..base.clone()
        };
        let (train_loss, val_loss, kept) = match fit(&mut model, train, val, &cfg) {
            Ok(h) => (h.best().train_loss, h.best().val_loss, Some((model, h))),
            Err(Error::Numeric(_)) => (f64::NAN, f64::NAN, None),
            Err(e) => return Err(e),
        };
        let record = TrialRecord {
            index: i,
            params: hp.clone(),
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        Ok((record, kept))
    };
    let results: Vec<_> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| points.par_iter().enumerate().map(run).collect::<Result<Vec<_>>>())?
    } else {
        points.iter().enumerate().map(run).collect::<Result<Vec<_>>>()?
    };

    let mut best: Option<usize> = None;
    for (i, (record, kept)) in results.iter().enumerate() {
        if kept.is_some() && best.is_none_or(|b| record.val_loss < results[b].0.val_loss) {
            best = Some(i);
        }
    }
    let best_index = best.ok_or_else(|| Error::Numeric("every search trial diverged".into()))?;
    let mut trials = Vec::with_capacity(results.len());
    let mut winner = None;
    for (i, (record, kept)) in results.into_iter().enumerate() {
        if i == best_index {
            winner = kept;
        }
        trials.push(record);
    }
    let (model, history) = winner.expect("best trial kept its model");
    Ok(SearchOutcome {
        best_index,
        best: trials[best_index].params.clone(),
        model,
        history,
        trials,
    })
}

/// One CSV row per trial, tagged with the test year of its split.
pub fn write_trials_csv(path: impl AsRef<Path>, trials: &[(i32, TrialRecord)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "test_year,trial,d_model,n_heads,t2v_k,batch_size,learning_rate,dropout,train_loss,val_loss,seconds"
    )?;
    for (year, t) in trials {
        let p = &t.params;
        writeln!(
            out,
            "{year},{},{},{},{},{},{},{},{},{},{:.3}",
            t.index,
            p.d_model,
            p.n_heads,
            p.t2v_k,
            p.batch_size,
            p.learning_rate,
            p.dropout,
            t.train_loss,
            t.val_loss,
            t.seconds
        )?;
    }
    out.flush()?;
    Ok(())
}
