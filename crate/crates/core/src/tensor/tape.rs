use super::{axis_split, sigmoid_scalar, sign_plus, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
    Sqrt(Var),
    Abs(Var),
    Sin(Var),
    Tanh(Var),
    Elu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
        None => *slot = Some(contrib),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul")?;
        let (k2, n) = self.value(b).require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a length-`n` row (shape `[n]` or `[1, n]`) to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("add_row")?;
        if self.value(row).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (d, &b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *d += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::AddRow(a, row),
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// `max(x, floor)` elementwise; no gradient flows where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor), Op::ClampMin(x, floor))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid_scalar, Op::Sigmoid(x))
    }

    /// Elementwise sign with `sign(0) = +1`, recorded as a constant.
    pub fn sign_const(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sign_plus);
        self.constant(value)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let nd = self.value(x).ndim();
        if axis >= nd {
            return Err(Error::Contract(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let value = self.value(x);
        let (outer, len, inner) = axis_split(value.shape(), axis);
        let src = value.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    data[idx(j)] /= total;
                }
            }
        }
        let shape = value.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes each slice along the last axis with population variance,
    /// then applies the per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let value = self.value(x);
        let d = value.cols();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::shape("layer_norm", value.shape(), self.shape(gain)));
        }
        let rows = value.len() / d;
        let src = value.data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let slice = &src[r * d..(r + 1) * d];
            let mean = slice.iter().sum::<f64>() / d as f64;
            let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (slice[j] - mean) * is;
                xhat[r * d + j] = h;
                data[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = value.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor { shape, data },
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let value = self.value(x);
        let (outer, full, inner) = axis_split(value.shape(), axis);
        if len == 0 || start + len > full {
            return Err(Error::Contract(format!(
                "slice [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                value.shape()
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            data.extend_from_slice(&value.data()[from..from + len * inner]);
        }
        let mut shape = value.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data }, Op::Slice { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).require_matrix("transpose")?;
        let data = transpose_raw(self.value(x).data(), r, c);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![c, r],
                data,
            },
            Op::Transpose(x),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, divide: bool) -> Result<Var> {
        self.check_axis("reduce", x, axis)?;
        let value = self.value(x);
        let (outer, len, inner) = axis_split(value.shape(), axis);
        let src = value.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * len + j) * inner + i];
                }
            }
        }
        if divide {
            data.iter_mut().for_each(|d| *d /= len as f64);
        }
        let mut shape = value.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(x);
        let op = if divide {
            Op::MeanAxis { x, axis }
        } else {
            Op::SumAxis { x, axis }
        };
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Reinterprets a value with a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, found shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], contrib);
            }
        };
        let ew = |x: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            x.data()
                .iter()
                .zip(out.data())
                .zip(g)
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if self.rg(*a) {
                    let bt = transpose_raw(val(*b).data(), k, n);
                    send(*a, matmul_raw(g, &bt, m, n, k));
                }
                if self.rg(*b) {
                    let at = transpose_raw(val(*a).data(), m, k);
                    send(*b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                if self.rg(*a) {
                    send(*a, g.iter().zip(vb).map(|(gi, bi)| gi * bi).collect());
                }
                if self.rg(*b) {
                    send(*b, g.iter().zip(va).map(|(gi, ai)| gi * ai).collect());
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                if self.rg(*a) {
                    send(*a, g.iter().zip(vb).map(|(gi, bi)| gi / bi).collect());
                }
                if self.rg(*b) {
                    send(
                        *b,
                        g.iter()
                            .zip(va.iter().zip(vb))
                            .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                            .collect(),
                    );
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.to_vec());
                if self.rg(*row) {
                    let n = out.cols();
                    let mut gr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(s, c)| *s += c);
                    }
                    send(*row, gr);
                }
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|gi| gi * c).collect()),
            Op::AddScalar(x) => send(*x, g.to_vec()),
            Op::ClampMin(x, floor) => send(*x, ew(val(*x), &|xi, _, gi| if xi > *floor { gi } else { 0.0 })),
            Op::Sqrt(x) => send(*x, ew(val(*x), &|_, y, gi| 0.5 * gi / y)),
            Op::Abs(x) => send(
                *x,
                ew(val(*x), &|xi, _, gi| {
                    if xi > 0.0 {
                        gi
                    } else if xi < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sin(x) => send(*x, ew(val(*x), &|xi, _, gi| gi * xi.cos())),
            Op::Tanh(x) => send(*x, ew(val(*x), &|_, y, gi| gi * (1.0 - y * y))),
            Op::Elu(x) => send(*x, ew(val(*x), &|xi, y, gi| if xi > 0.0 { gi } else { gi * (y + 1.0) })),
            Op::Sigmoid(x) => send(*x, ew(val(*x), &|_, y, gi| gi * y * (1.0 - y))),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                send(*x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let gain_v = val(*gain).data();
                if self.rg(*gain) {
                    let mut gg = vec![0.0; d];
                    for (r, chunk) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] += chunk[j] * xhat[r * d + j];
                        }
                    }
                    send(*gain, gg);
                }
                if self.rg(*bias) {
                    let mut gb = vec![0.0; d];
                    for chunk in g.chunks(d) {
                        gb.iter_mut().zip(chunk).for_each(|(s, c)| *s += c);
                    }
                    send(*bias, gb);
                }
                if self.rg(*x) {
                    let mut gx = vec![0.0; g.len()];
                    let df = d as f64;
                    for (r, chunk) in g.chunks(d).enumerate() {
                        let h = &xhat[r * d..(r + 1) * d];
                        let gh: Vec<f64> = (0..d).map(|j| chunk[j] * gain_v[j]).collect();
                        let s1: f64 = gh.iter().sum();
                        let s2: f64 = gh.iter().zip(h).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] / df * (df * gh[j] - s1 - h[j] * s2);
                        }
                    }
                    send(*x, gx);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = val(v).shape()[*axis] * inner;
                    if self.rg(v) {
                        let mut gv = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let from = o * total + offset;
                            gv.extend_from_slice(&g[from..from + chunk]);
                        }
                        send(v, gv);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let src = val(*x);
                let (outer, full, inner) = axis_split(src.shape(), *axis);
                let len = out.shape()[*axis];
                let mut gx = vec![0.0; src.len()];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    let from = o * len * inner;
                    gx[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                send(*x, gx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Transpose(x) => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                send(*x, transpose_raw(g, c, r));
            }
            Op::SumAll(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let src = val(*x);
                let (outer, len, inner) = axis_split(src.shape(), *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut gx = vec![0.0; src.len()];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            gx[(o * len + j) * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                send(*x, gx);
            }
        }
    }
}
