//! The encoder-decoder allocation network.
//!
//! Input windows of daily asset returns are embedded together with a learned
//! time encoding, passed through stacks of attention + gated residual layers,
//! and mapped to per-asset scores. The output head turns scores into weights
//! `sign(s) * softmax(s)`, so gross exposure is always exactly one.

mod checkpoint;
pub mod layers;

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_MAGIC};
pub use layers::{
    attention, causal_mask, DecoderLayer, EncoderLayer, Grn, LayerNorm, MultiHeadAttention, Time2Vec, MASK_BLOCKED,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, ParamStore, Session};
use crate::tensor::{Tensor, Var};

/// Which width divides attention scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `sqrt(d_model)`
    #[default]
    DModel,
    /// `sqrt(d_model / n_heads)`
    DK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtConfig {
    pub n_assets: usize,
    /// Rows per encoder window and per decoder window.
    pub window: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Number of periodic time-encoding components.
    pub t2v_k: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

fn default_layers() -> usize {
    4
}

impl PtConfig {
    pub fn new(n_assets: usize, window: usize, d_model: usize, n_heads: usize, t2v_k: usize) -> Self {
        PtConfig {
            n_assets,
            window,
            d_model,
            n_heads,
            t2v_k,
            n_layers: default_layers(),
            scale_mode: ScaleMode::DModel,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_assets < 2 {
            return fail(format!("need at least 2 assets, got {}", self.n_assets));
        }
        if self.window < 2 {
            return fail(format!("window must be >= 2, got {}", self.window));
        }
        if self.n_heads == 0 || self.d_model < self.n_heads || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.t2v_k == 0 {
            return fail("t2v_k must be >= 1".into());
        }
        if self.n_layers == 0 {
            return fail("n_layers must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn attention_scale(&self) -> f64 {
        match self.scale_mode {
            ScaleMode::DModel => (self.d_model as f64).sqrt(),
            ScaleMode::DK => ((self.d_model / self.n_heads) as f64).sqrt(),
        }
    }
}

/// Turns an `m×N` score matrix into weights `sign(s) ⊙ softmax(s)` per row.
pub fn allocation_head(s: &mut Session, scores: Var) -> Result<Var> {
    let sign = s.tape.sign_const(scores);
    let soft = s.tape.softmax(scores, 1)?;
    s.tape.mul(sign, soft)
}

/// A trainable strategy mapping a return history to portfolio weights.
///
/// `history` holds `2τ` consecutive days of returns. The network returns a
/// `τ×N` matrix whose row `j` is the allocation decided at the close of day
/// `τ + j` of the history.
pub trait AllocationNetwork: Clone + Send + Sync {
    fn kind(&self) -> &'static str;
    fn window(&self) -> usize;
    fn n_assets(&self) -> usize;
    fn dropout(&self) -> f64 {
        0.0
    }
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn weights(&self, s: &mut Session, history: &Tensor) -> Result<Var>;
    fn to_checkpoint(&self) -> Checkpoint;

    /// Allocation for the day after the last row of `history`.
    fn predict_next(&self, history: &Tensor) -> Result<Vec<f64>> {
        let mut s = Session::new(self.params());
        let w = self.weights(&mut s, history)?;
        let value = s.value(w);
        Ok(value.row(value.rows() - 1).to_vec())
    }
}

pub(crate) fn check_history(history: &Tensor, window: usize, n_assets: usize) -> Result<()> {
    if history.shape() != [2 * window, n_assets] {
        return Err(Error::shape("history", history.shape(), &[2 * window, n_assets]));
    }
    Ok(())
}

pub(crate) fn rows_of(t: &Tensor, start: usize, len: usize) -> Tensor {
    let c = t.cols();
    Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec()).expect("row range")
}

#[derive(Clone, Debug)]
pub struct PortfolioTransformer {
    config: PtConfig,
    params: ParamStore,
    input_proj: Dense,
    time2vec: Time2Vec,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Dense,
}

impl PortfolioTransformer {
    pub fn new(config: PtConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let d = config.d_model;
        let scale = config.attention_scale();
        let time2vec = Time2Vec::new(&mut p, &mut rng, "time2vec", config.t2v_k);
        let input_proj = Dense::new(&mut p, &mut rng, "input_proj", config.n_assets + config.t2v_k + 1, d);
        let encoder = (0..config.n_layers)
            .map(|i| EncoderLayer::new(&mut p, &mut rng, &format!("encoder{i}"), d, config.n_heads, scale))
            .collect();
        let decoder = (0..config.n_layers)
            .map(|i| DecoderLayer::new(&mut p, &mut rng, &format!("decoder{i}"), d, config.n_heads, scale))
            .collect();
        let head = Dense::new(&mut p, &mut rng, "head", d, config.n_assets);
        Ok(PortfolioTransformer {
            config,
            params: p,
            input_proj,
            time2vec,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &PtConfig {
        &self.config
    }

    pub fn time2vec(&self) -> &Time2Vec {
        &self.time2vec
    }

    pub fn encoder_layers(&self) -> &[EncoderLayer] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[DecoderLayer] {
        &self.decoder
    }

    pub fn input_projection(&self) -> &Dense {
        &self.input_proj
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Row `t` of the result projects `concat(x[t], time2vec(t))`.
    pub fn embed(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.n_assets {
            return Err(Error::shape(
                "embed",
                &shape,
                &[self.config.window, self.config.n_assets],
            ));
        }
        let t2v = self.time2vec.encode(s, shape[0])?;
        let cat = s.tape.concat(&[x, t2v], 1)?;
        self.input_proj.forward(s, cat)
    }

    /// Scores before the output head, `τ×N`.
    pub fn scores(&self, s: &mut Session, x_enc: Var, x_dec: Var) -> Result<Var> {
        let (w, n) = (self.config.window, self.config.n_assets);
        for x in [x_enc, x_dec] {
            if s.tape.shape(x) != [w, n] {
                return Err(Error::shape("pt_forward", s.tape.shape(x), &[w, n]));
            }
        }
        let mut memory = self.embed(s, x_enc)?;
        for layer in &self.encoder {
            memory = layer.forward(s, memory)?;
        }
        let mask = s.input(causal_mask(w));
        let mut y = self.embed(s, x_dec)?;
        for layer in &self.decoder {
            y = layer.forward(s, y, memory, mask)?;
        }
        self.head.forward(s, y)
    }

    /// Weights `τ×N` from an encoder window and the decoder window that follows it.
    pub fn forward(&self, s: &mut Session, x_enc: Var, x_dec: Var) -> Result<Var> {
        let scores = self.scores(s, x_enc, x_dec)?;
        allocation_head(s, scores)
    }

    pub fn forward_values(&self, x_enc: &Tensor, x_dec: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.params);
        let e = s.input(x_enc.clone());
        let d = s.input(x_dec.clone());
        let w = self.forward(&mut s, e, d)?;
        Ok(s.value(w).clone())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != "pt" {
            return Err(Error::Checkpoint(format!(
                "expected a pt checkpoint, found {}",
                ckpt.kind
            )));
        }
        let config: PtConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Self::new(config)?;
        model.params.copy_from(&ckpt.param_store()?)?;
        Ok(model)
    }
}

impl AllocationNetwork for PortfolioTransformer {
    fn kind(&self) -> &'static str {
        "pt"
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
        let e = s.input(rows_of(history, 0, w));
        let d = s.input(rows_of(history, w, w));
        self.forward(s, e, d)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "pt",
            self.config.seed,
            serde_json::to_value(&self.config).expect("config serializes"),
            &self.params,
        )
    }
}

#[cfg(test)]
mod tests;
