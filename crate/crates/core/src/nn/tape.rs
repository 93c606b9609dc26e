//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape once in reverse and accumulates parameter gradients into a
//! [`ParamStore`]. A tape is built for one loss evaluation and then dropped.
//!
//! Binary elementwise ops broadcast operands of shape `[1, m]`, `[n, 1]` or
//! `[1, 1]` against `[n, m]`.

use super::store::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Tanh(Var),
    Relu(Var),
    Silu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Concat(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> Option<[usize; 2]> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some([dim(a[0], b[0])?, dim(a[1], b[1])?])
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

/// Sums a full-size gradient down to the (possibly broadcast) operand shape.
fn reduce_to(grad: &Tensor, shape: [usize; 2]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape);
    let [n, m] = grad.shape();
    let od = out.data_mut();
    let g = grad.data();
    for r in 0..n {
        for c in 0..m {
            od[bidx(shape, r, c)] += g[r * m + c];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Reads a parameter from `store`. All parameters on one tape must come
    /// from the store later passed to [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(Error::Usage(format!(
                "matmul of [{m}, {k}] by [{k2}, {n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        Ok(self.push(Tensor::from_raw([m, n], out), Op::MatMul(a, b)))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<([usize; 2], Vec<f64>)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let out = broadcast_shape(sa, sb)
            .ok_or_else(|| Error::Usage(format!("{name} of {sa:?} and {sb:?}")))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(out[0] * out[1]);
        if sa == out && sb == out {
            data.extend(va.iter().zip(vb).map(|(x, y)| f(*x, *y)));
        } else {
            for r in 0..out[0] {
                for c in 0..out[1] {
                    data.push(f(va[bidx(sa, r, c)], vb[bidx(sb, r, c)]));
                }
            }
        }
        Ok((out, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Tensor::from_raw(s, d), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Tensor::from_raw(s, d), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Tensor::from_raw(s, d), Op::Mul(a, b)))
    }

    /// Elementwise minimum; the gradient goes to `a` on ties.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary(a, b, "minimum", f64::min)?;
        Ok(self.push(Tensor::from_raw(s, d), Op::Minimum(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::from_raw(v.shape(), data);
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Sum of all elements, as `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements, as `[1, 1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Per-row sum: `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let [n, m] = v.shape();
        let data = (0..n)
            .map(|r| v.data()[r * m..(r + 1) * m].iter().sum())
            .collect();
        self.push(Tensor::from_raw([n, 1], data), Op::SumCols(a))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let t = Tensor::hcat(&tensors)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, shape: [usize; 2]) -> Result<Var> {
        let v = self.value(a);
        if v.len() != shape[0] * shape[1] {
            return Err(Error::Usage(format!(
                "cannot reshape {:?} to {shape:?}",
                v.shape()
            )));
        }
        let t = Tensor::from_raw(shape, v.data().to_vec());
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Affine map `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Accumulates `d loss / d param` into `store` for every parameter on the
    /// tape. Gradients add to whatever the store already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = store.grad_mut(*id);
                    if slot.shape() != g.shape() {
                        return Err(Error::Usage(format!(
                            "parameter '{}' not from this store",
                            store.name(*id)
                        )));
                    }
                    slot.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(s, x)| *s += x);
                }
                Op::MatMul(a, b) => {
                    let [m, k] = self.shape(*a);
                    let n = self.shape(*b)[1];
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, false);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, false);
                    accumulate(&mut grads[a.0], Tensor::from_raw([m, k], ga));
                    accumulate(&mut grads[b.0], Tensor::from_raw([k, n], gb));
                }
                Op::Add(a, b) => {
                    let ga = reduce_to(&g, self.shape(*a));
                    let gb = reduce_to(&g, self.shape(*b));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Sub(a, b) => {
                    let ga = reduce_to(&g, self.shape(*a));
                    let mut gb = reduce_to(&g, self.shape(*b));
                    gb.data_mut().iter_mut().for_each(|x| *x = -*x);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Mul(a, b) | Op::Minimum(a, b) => {
                    let out = node.value.shape();
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let is_min = matches!(node.op, Op::Minimum(..));
                    let mut fa = Tensor::zeros(out);
                    let mut fb = Tensor::zeros(out);
                    {
                        let (da, db) = (fa.data_mut(), fb.data_mut());
                        let gd = g.data();
                        for r in 0..out[0] {
                            for c in 0..out[1] {
                                let j = r * out[1] + c;
                                let x = va[bidx(sa, r, c)];
                                let y = vb[bidx(sb, r, c)];
                                if is_min {
                                    if x <= y {
                                        da[j] = gd[j];
                                    } else {
                                        db[j] = gd[j];
                                    }
                                } else {
                                    da[j] = gd[j] * y;
                                    db[j] = gd[j] * x;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], reduce_to(&fa, sa));
                    accumulate(&mut grads[b.0], reduce_to(&fb, sb));
                }
                Op::Scale(a, k) => {
                    let d = g.data().iter().map(|x| x * k).collect();
                    accumulate(&mut grads[a.0], Tensor::from_raw(g.shape(), d));
                }
                Op::Square(a)
                | Op::Tanh(a)
                | Op::Relu(a)
                | Op::Silu(a)
                | Op::Exp(a)
                | Op::Log(a)
                | Op::Softplus(a)
                | Op::Clamp(a, ..) => {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let d: Vec<f64> = match &node.op {
                        Op::Square(_) => (0..x.len()).map(|j| g.data()[j] * 2.0 * x[j]).collect(),
                        Op::Tanh(_) => (0..x.len())
                            .map(|j| g.data()[j] * (1.0 - y[j] * y[j]))
                            .collect(),
                        Op::Relu(_) => (0..x.len())
                            .map(|j| if x[j] > 0.0 { g.data()[j] } else { 0.0 })
                            .collect(),
                        Op::Silu(_) => (0..x.len())
                            .map(|j| {
                                let s = sigmoid(x[j]);
                                g.data()[j] * s * (1.0 + x[j] * (1.0 - s))
                            })
                            .collect(),
                        Op::Exp(_) => (0..x.len()).map(|j| g.data()[j] * y[j]).collect(),
                        Op::Log(_) => (0..x.len()).map(|j| g.data()[j] / x[j]).collect(),
                        Op::Softplus(_) => (0..x.len())
                            .map(|j| g.data()[j] * sigmoid(x[j]))
                            .collect(),
                        Op::Clamp(_, lo, hi) => (0..x.len())
                            .map(|j| {
                                if x[j] >= *lo && x[j] <= *hi {
                                    g.data()[j]
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                        _ => unreachable!(),
                    };
                    accumulate(&mut grads[a.0], Tensor::from_raw(g.shape(), d));
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = (shape[0] * shape[1]) as f64;
                    let k = if matches!(node.op, Op::Mean(_)) {
                        g.item() / n
                    } else {
                        g.item()
                    };
                    accumulate(&mut grads[a.0], Tensor::filled(shape, k));
                }
                Op::SumCols(a) => {
                    let [n, m] = self.shape(*a);
                    let mut d = Vec::with_capacity(n * m);
                    for r in 0..n {
                        d.extend(std::iter::repeat(g.data()[r]).take(m));
                    }
                    accumulate(&mut grads[a.0], Tensor::from_raw([n, m], d));
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p)[1];
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        accumulate(&mut grads[p.0], Tensor::from_raw([rows, w], d));
                        off += w;
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    accumulate(&mut grads[a.0], Tensor::from_raw(shape, g.into_data()));
                }
            }
        }
        Ok(())
    }
}
