use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{init_weight, Dense, ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};

/// Additive mask value for blocked attention positions.
pub const MASK_BLOCKED: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// `τ×τ` additive mask letting position `i` attend to `j <= i` only.
pub fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in i + 1..len {
            m.data_mut()[i * len + j] = MASK_BLOCKED;
        }
    }
    m
}

/// `softmax(Q Kᵀ / scale + M) V`.
pub fn attention(s: &mut Session, q: Var, k: Var, v: Var, mask: Option<Var>, scale: f64) -> Result<Var> {
    if let Some(m) = mask {
        let mv = s.value(m);
        let cols = mv.cols();
        let fully_masked = mv
            .data()
            .chunks(cols)
            .position(|row| row.iter().all(|&x| x <= MASK_BLOCKED));
        if let Some(row) = fully_masked {
            return Err(Error::Contract(format!(
                "attention mask blocks every key for query row {row}"
            )));
        }
    }
    let kt = s.tape.transpose(k)?;
    let scores = s.tape.matmul(q, kt)?;
    let mut scores = s.tape.scale(scores, 1.0 / scale);
    if let Some(m) = mask {
        scores = s.tape.add(scores, m)?;
    }
    let weights = s.tape.softmax(scores, 1)?;
    s.tape.matmul(weights, v)
}

/// Learnable time encoding: one linear component followed by `k` sinusoids.
#[derive(Clone, Debug)]
pub struct Time2Vec {
    pub omega: ParamId,
    pub phi: ParamId,
    pub k: usize,
}

impl Time2Vec {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, k: usize) -> Self {
        let dist = Uniform::new_inclusive(-1.0, 1.0);
        let mut draw = |n: usize| Tensor::matrix(1, n, (0..n).map(|_| dist.sample(rng)).collect()).expect("k+1 > 0");
        let omega = store.add(format!("{name}.omega"), draw(k + 1));
        let phi = store.add(format!("{name}.phi"), draw(k + 1));
        Time2Vec { omega, phi, k }
    }

    /// Encodes positions `0..len` as a `len×(k+1)` matrix.
    pub fn encode(&self, s: &mut Session, len: usize) -> Result<Var> {
        let t = s.input(Tensor::matrix(len, 1, (0..len).map(|t| t as f64).collect())?);
        self.encode_positions(s, t)
    }

    fn encode_positions(&self, s: &mut Session, t: Var) -> Result<Var> {
        let omega = s.param(self.omega);
        let phi = s.param(self.phi);
        let lin = s.tape.matmul(t, omega)?;
        let lin = s.tape.add_row(lin, phi)?;
        let linear = s.tape.slice(lin, 1, 0, 1)?;
        let periodic = s.tape.slice(lin, 1, 1, self.k)?;
        let periodic = s.tape.sin(periodic);
        s.tape.concat(&[linear, periodic], 1)
    }

    /// Encoding of a single time index.
    pub fn encode_at(&self, store: &ParamStore, t: usize) -> Result<Vec<f64>> {
        let mut s = Session::new(store);
        let tv = s.input(Tensor::matrix(1, 1, vec![t as f64])?);
        let out = self.encode_positions(&mut s, tv)?;
        Ok(s.value(out).data().to_vec())
    }
}

/// Multi-head attention with per-head projections and an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    pub w_o: ParamId,
    pub scale: f64,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        scale: f64,
    ) -> Self {
        let d_k = d_model / n_heads;
        let mut heads = |kind: &str| -> Vec<ParamId> {
            (0..n_heads)
                .map(|i| store.add(format!("{name}.head{i}.w_{kind}"), init_weight(rng, d_model, d_k)))
                .collect()
        };
        let w_q = heads("q");
        let w_k = heads("k");
        let w_v = heads("v");
        let w_o = store.add(format!("{name}.w_o"), init_weight(rng, n_heads * d_k, d_model));
        MultiHeadAttention {
            w_q,
            w_k,
            w_v,
            w_o,
            scale,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn forward(&self, s: &mut Session, q_in: Var, k_in: Var, v_in: Var, mask: Option<Var>) -> Result<Var> {
        let mut heads = Vec::with_capacity(self.n_heads());
        for i in 0..self.n_heads() {
            let (wq, wk, wv) = (s.param(self.w_q[i]), s.param(self.w_k[i]), s.param(self.w_v[i]));
            let q = s.tape.matmul(q_in, wq)?;
            let k = s.tape.matmul(k_in, wk)?;
            let v = s.tape.matmul(v_in, wv)?;
            heads.push(attention(s, q, k, v, mask, self.scale)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            s.tape.concat(&heads, 1)?
        };
        let wo = s.param(self.w_o);
        s.tape.matmul(cat, wo)
    }
}

/// Learned layer-norm affine parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.param(self.gain);
        let b = s.param(self.bias);
        s.tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Gated residual network: `LayerNorm(z + GLU(W1 ELU(W2 z + b2) + b1))`,
/// with the GLU realized as `(g Wg + bg) ⊙ sigmoid(g Ws + bs)`.
#[derive(Clone, Debug)]
pub struct Grn {
    pub inner: Dense,
    pub outer: Dense,
    pub glu_value: Dense,
    pub glu_gate: Dense,
    pub norm: LayerNorm,
}

impl Grn {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d_model: usize) -> Self {
        Grn {
            inner: Dense::new(store, rng, &format!("{name}.w2"), d_model, d_model),
            outer: Dense::new(store, rng, &format!("{name}.w1"), d_model, d_model),
            glu_value: Dense::new(store, rng, &format!("{name}.glu_value"), d_model, d_model),
            glu_gate: Dense::new(store, rng, &format!("{name}.glu_gate"), d_model, d_model),
            norm: LayerNorm::new(store, &format!("{name}.norm"), d_model),
        }
    }

    pub fn forward(&self, s: &mut Session, z: Var) -> Result<Var> {
        let g2 = self.inner.forward(s, z)?;
        let g2 = s.tape.elu(g2);
        let g1 = self.outer.forward(s, g2)?;
        let value = self.glu_value.forward(s, g1)?;
        let gate = self.glu_gate.forward(s, g1)?;
        let gate = s.tape.sigmoid(gate);
        let glu = s.tape.mul(value, gate)?;
        let glu = s.dropout(glu)?;
        let res = s.tape.add(z, glu)?;
        self.norm.forward(s, res)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub grn: Grn,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        scale: f64,
    ) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d_model, n_heads, scale),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d_model),
            grn: Grn::new(store, rng, &format!("{name}.grn"), d_model),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let a = self.attn.forward(s, x, x, x, None)?;
        let a = s.dropout(a)?;
        let r = s.tape.add(x, a)?;
        let x = self.attn_norm.forward(s, r)?;
        self.grn.forward(s, x)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub self_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub grn: Grn,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        scale: f64,
    ) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), d_model, n_heads, scale),
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d_model),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), d_model, n_heads, scale),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d_model),
            grn: Grn::new(store, rng, &format!("{name}.grn"), d_model),
        }
    }

    pub fn forward(&self, s: &mut Session, y: Var, memory: Var, mask: Var) -> Result<Var> {
        let a = self.self_attn.forward(s, y, y, y, Some(mask))?;
        let a = s.dropout(a)?;
        let r = s.tape.add(y, a)?;
        let y = self.self_norm.forward(s, r)?;
        let c = self.cross_attn.forward(s, y, memory, memory, None)?;
        let c = s.dropout(c)?;
        let r = s.tape.add(y, c)?;
        let y = self.cross_norm.forward(s, r)?;
        self.grn.forward(s, y)
    }
}
