//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Tape`] computes its value eagerly and appends a
//! node recording its inputs. [`Tape::backward`] walks the nodes once, from
//! the loss towards the leaves, applying each op's vector-Jacobian product.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{
    broadcast_binary, gelu, gelu_grad, layernorm_forward, matmul_nn, matmul_nt, matmul_tn,
    reduce_to_shape, same_shape, split_axis, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Exp(Var),
    Sqrt(Var),
    Tanh(Var),
    Gelu(Var),
    Square(Var),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<S>,
        rstd: Vec<S>,
    },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    SumAxis { x: Var },
    Dropout { x: Var, mask: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recorded computation graph. Single-threaded by construction.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf (a parameter or input of interest).
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> Result<S> {
        self.value(v).item()
    }

    fn push_raw(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var], name: &'static str) -> Result<Var> {
        let value = value.finite(name)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    // ---- elementwise (broadcasting) ----------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("div", self.value(a), self.value(b), |x, y| x / y)?;
        self.push(v, Op::Div(a, b), &[a, b], "div")
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a], "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: Var, s: S) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a], "add_scalar")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a), &[a], "exp")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.sqrt());
        self.push(v, Op::Sqrt(a), &[a], "sqrt")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a], "tanh")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a), &[a], "gelu")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a], "square")
    }

    // ---- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], data), Op::MatMulNt(a, b), &[a, b], "matmul_nt")
    }

    // ---- normalization ---------------------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).softmax(axis)?;
        self.push(v, Op::Softmax { x, axis }, &[x], "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).log_softmax(axis)?;
        self.push(v, Op::LogSoftmax { x, axis }, &[x], "log_softmax")
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (y, xhat, rstd) = layernorm_forward(self.value(x), self.value(gain), self.value(bias), eps)?;
        self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
            "layernorm",
        )
    }

    // ---- structure ---------------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&values, axis)?;
        self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
            "concat",
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice(axis, start, len)?;
        self.push(v, Op::Slice { x, axis, start }, &[x], "slice")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape.to_vec())?;
        self.push(v, Op::Reshape(x), &[x], "reshape")
    }

    // ---- reductions ----------------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x), &[x], "mean")
    }

    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum_sq());
        self.push(v, Op::SumSq(x), &[x], "sum_sq")
    }

    /// Sum along `axis`, keeping it as a length-1 dimension.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).sum_axis(axis, true)?;
        self.push(v, Op::SumAxis { x }, &[x], "sum_axis")
    }

    /// Mean squared error between `a` and `b` over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let d = self.sub(a, b)?;
        let s = self.square(d)?;
        self.mean(s)
    }

    /// Inverted dropout: zeroes entries with probability `p`, rescales the rest.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut SplitMix64) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::invalid(format!("dropout probability {p} must be < 1")));
        }
        let keep = S::lit(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.value(x).len())
            .map(|_| if rng.bernoulli(p) { S::zero() } else { keep })
            .collect();
        let x_val = self.value(x);
        let data = x_val.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let v = Tensor::from_parts(x_val.shape().to_vec(), data);
        self.push(v, Op::Dropout { x, mask }, &[x], "dropout")
    }

    // ---- backward ------------------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<S>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), S::one()));
        let mut visited = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            self.apply_vjp(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            visited,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let g = reduce_to_shape(&g, self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => {
                let sum = acc.data().iter().zip(g.data()).map(|(&a, &b)| a + b).collect();
                *acc = Tensor::from_parts(g.shape().to_vec(), sum);
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn apply_vjp(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let ga = broadcast_binary("mul", g, self.value(*b), |x, y| x * y)?;
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let gb = broadcast_binary("mul", g, self.value(*a), |x, y| x * y)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    let ga = broadcast_binary("div", g, self.value(*b), |x, y| x / y)?;
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    // d(a/b)/db = -out / b
                    let t = broadcast_binary("div", out, self.value(*b), |x, y| x / y)?;
                    let gb = broadcast_binary("mul", g, &t, |x, y| -x * y)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => {
                let ga = broadcast_binary("exp", g, out, |x, y| x * y)?;
                self.accumulate(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                let ga = broadcast_binary("sqrt", g, out, |x, y| x / (y + y))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = broadcast_binary("tanh", g, out, |x, y| x * (S::one() - y * y))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = broadcast_binary("gelu", g, self.value(*a), |x, y| x * gelu_grad(y))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let two = S::lit(2.0);
                let ga = broadcast_binary("square", g, self.value(*a), |x, y| two * x * y)?;
                self.accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                if self.needs(*a) {
                    let ga = matmul_nt(g.data(), self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.needs(*b) {
                    let gb = matmul_tn(self.value(*a).data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (n, _) = self.value(*b).dims2()?;
                if self.needs(*a) {
                    let ga = matmul_nn(g.data(), self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.needs(*b) {
                    let gb = matmul_tn(g.data(), self.value(*a).data(), m, n, k);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![n, k], gb));
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, dim, inner) = split_axis(out.shape(), *axis)?;
                let y = out.data();
                let gd = g.data();
                let mut gx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |d: usize| (o * dim + d) * inner + j;
                        let dot = (0..dim).fold(S::zero(), |acc, d| acc + gd[idx(d)] * y[idx(d)]);
                        for d in 0..dim {
                            gx[idx(d)] = y[idx(d)] * (gd[idx(d)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, dim, inner) = split_axis(out.shape(), *axis)?;
                let y = out.data();
                let gd = g.data();
                let mut gx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |d: usize| (o * dim + d) * inner + j;
                        let total = (0..dim).fold(S::zero(), |acc, d| acc + gd[idx(d)]);
                        for d in 0..dim {
                            gx[idx(d)] = gd[idx(d)] - y[idx(d)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = *out.shape().last().unwrap_or(&1);
                let nf = S::from_usize_lossy(n);
                let gain_v = self.value(*gain).data();
                let mut gx = vec![S::zero(); out.len()];
                let mut ggain = vec![S::zero(); n];
                let mut gbias = vec![S::zero(); n];
                for (r, ((grow, hrow), &rs)) in g
                    .data()
                    .chunks(n)
                    .zip(xhat.data().chunks(n))
                    .zip(rstd)
                    .enumerate()
                {
                    let mut mean_dh = S::zero();
                    let mut mean_dh_h = S::zero();
                    for c in 0..n {
                        let dh = grow[c] * gain_v[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[c];
                        ggain[c] += grow[c] * hrow[c];
                        gbias[c] += grow[c];
                    }
                    mean_dh /= nf;
                    mean_dh_h /= nf;
                    for c in 0..n {
                        let dh = grow[c] * gain_v[c];
                        gx[r * n + c] = rs * (dh - mean_dh - hrow[c] * mean_dh_h);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
                self.accumulate(grads, *gain, Tensor::from_parts(vec![n], ggain));
                self.accumulate(grads, *bias, Tensor::from_parts(vec![n], gbias));
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice(*axis, start, len)?);
                    }
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x);
                let (outer, dim, inner) = split_axis(in_shape, *axis)?;
                let len = out.shape()[*axis];
                let mut gx = vec![S::zero(); outer * dim * inner];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(in_shape.to_vec(), gx));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.reshape(self.shape(*x).to_vec())?);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), gv));
            }
            Op::Mean(x) => {
                let n = S::from_usize_lossy(self.value(*x).len().max(1));
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x).to_vec(), gv));
            }
            Op::SumSq(x) => {
                let gv = S::lit(2.0) * g.data()[0];
                self.accumulate(grads, *x, self.value(*x).map(|v| gv * v));
            }
            Op::SumAxis { x } => {
                // keepdim output broadcasts back over the summed axis
                let shape = self.shape(*x).to_vec();
                let ones = Tensor::full(shape, S::one());
                let gx = broadcast_binary("sum_axis", &ones, g, |a, b| a * b)?;
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), data));
            }
        }
        Ok(())
    }
}

/// Central finite-difference directional derivative of `f` at `x` along `dir`.
pub fn directional_fd<S: Scalar>(
    f: &mut impl FnMut(&[Tensor<S>]) -> Result<S>,
    x: &[Tensor<S>],
    dir: &[Tensor<S>],
    h: S,
) -> Result<S> {
    let shifted = |sign: S| -> Result<Vec<Tensor<S>>> {
        x.iter()
            .zip(dir)
            .map(|(p, d)| {
                let data = p
                    .data()
                    .iter()
                    .zip(d.data())
                    .map(|(&a, &b)| a + sign * h * b)
                    .collect();
                Tensor::new(p.shape().to_vec(), data)
            })
            .collect()
    };
    let plus = f(&shifted(S::one())?)?;
    let minus = f(&shifted(-S::one())?)?;
    Ok((plus - minus) / (h + h))
}
