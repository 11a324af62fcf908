//! Parameter storage and the per-pass session that binds parameters to a tape.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrites every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Contract("parameter layouts differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("copy_from", dst.shape(), src.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub(crate) fn from_parts(names: Vec<String>, values: Vec<Tensor>) -> Self {
        ParamStore { names, values }
    }
}

struct DropoutState {
    rate: f64,
    rng: ChaCha8Rng,
}

/// One forward (and optionally backward) pass: a fresh tape plus the
/// parameters bound onto it as leaves.
pub struct Session<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
    dropout: Option<DropoutState>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            dropout: None,
        }
    }

    /// A training pass with inverted dropout at `rate`. A zero rate records no masks.
    pub fn training(store: &'p ParamStore, rate: f64, seed: u64) -> Self {
        let mut s = Self::new(store);
        if rate > 0.0 {
            s.dropout = Some(DropoutState {
                rate,
                rng: ChaCha8Rng::seed_from_u64(seed),
            });
        }
        s
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), true);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some(state) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - state.rate;
        let shape = self.tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if state.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    /// Gradient of every parameter in store order; unused parameters get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.store
            .ids()
            .map(|id| {
                self.bound[id.0]
                    .and_then(|v| grads.get(v))
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.store.get(id).len()])
            })
            .collect()
    }
}

/// Dense matrix with entries from uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
pub fn init_weight(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive dims")
}

/// Affine map `x W + b` applied row-wise.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), init_weight(rng, fan_in, fan_out));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
        Dense { weight, bias }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let y = s.tape.matmul(x, w)?;
        s.tape.add_row(y, b)
    }
}
