//! Dense row-major tensors and the value-level kernels behind the tape.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Immutable dense tensor with row-major storage.
///
/// Every constructor and operation rejects NaN and infinite values, so a
/// `Tensor` that exists is always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Self { shape, data }.finite("tensor construction")
    }

    /// Builds a tensor from data the caller guarantees is finite and sized.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut SplitMix64) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        let data = (0..len).map(|_| S::lit(rng.normal() * std)).collect();
        Self { shape, data }
    }

    pub fn from_vec(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Self::new([n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::invalid(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> S {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let n = *self.shape.last().unwrap_or(&1);
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub(crate) fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        broadcast_binary("add", self, rhs, |a, b| a + b)?.finite("add")
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        broadcast_binary("sub", self, rhs, |a, b| a - b)?.finite("sub")
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        broadcast_binary("mul", self, rhs, |a, b| a * b)?.finite("mul")
    }

    pub fn div(&self, rhs: &Self) -> Result<Self> {
        broadcast_binary("div", self, rhs, |a, b| a / b)?.finite("div")
    }

    pub fn scale(&self, s: S) -> Result<Self> {
        self.map(|v| v * s).finite("scale")
    }

    pub fn add_scalar(&self, s: S) -> Result<Self> {
        self.map(|v| v + s).finite("add_scalar")
    }

    pub fn gelu(&self) -> Result<Self> {
        self.map(gelu).finite("gelu")
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Self::from_parts(vec![m, n], matmul_nn(&self.data, &rhs.data, m, k, n)).finite("matmul")
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        Ok(Self::from_parts(vec![n, m], transpose(&self.data, m, n)))
    }

    // ---- axis operations -------------------------------------------------

    /// Softmax along `axis`, max-subtracted for stability.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let (outer, dim, inner) = split_axis(&self.shape, axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * dim * inner + i;
                let idx = |d: usize| base + d * inner;
                let max = (0..dim).fold(S::neg_infinity(), |m, d| m.max(out[idx(d)]));
                let mut sum = S::zero();
                for d in 0..dim {
                    let e = (out[idx(d)] - max).exp();
                    out[idx(d)] = e;
                    sum += e;
                }
                for d in 0..dim {
                    out[idx(d)] /= sum;
                }
            }
        }
        Self::from_parts(self.shape.clone(), out).finite("softmax")
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Self> {
        let (outer, dim, inner) = split_axis(&self.shape, axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * dim * inner + i;
                let idx = |d: usize| base + d * inner;
                let max = (0..dim).fold(S::neg_infinity(), |m, d| m.max(out[idx(d)]));
                let lse = max
                    + (0..dim)
                        .map(|d| (out[idx(d)] - max).exp())
                        .fold(S::zero(), |a, b| a + b)
                        .ln();
                for d in 0..dim {
                    out[idx(d)] -= lse;
                }
            }
        }
        Self::from_parts(self.shape.clone(), out).finite("log_softmax")
    }

    /// Layer normalization over the last axis with per-feature gain and bias.
    pub fn layernorm(&self, gain: &Self, bias: &Self, eps: S) -> Result<Self> {
        Ok(layernorm_forward(self, gain, bias, eps)?.0)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::invalid(format!("concat axis {axis} on rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self::from_parts(shape, data))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let (outer, dim, inner) = split_axis(&self.shape, axis)?;
        if start + len > dim {
            return Err(Error::invalid(format!(
                "slice {start}..{} out of bounds for axis {axis} of {:?}",
                start + len,
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * dim + start) * inner;
            data.extend_from_slice(&self.data[from..from + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self::from_parts(shape, data))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b)
    }

    pub fn mean(&self) -> S {
        self.sum() / S::from_usize_lossy(self.data.len().max(1))
    }

    pub fn sum_sq(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b * b)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Self> {
        let (outer, dim, inner) = split_axis(&self.shape, axis)?;
        let mut data = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &self.data[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
        }
        Self::from_parts(shape, data).finite("sum_axis")
    }
}

// ---- kernels shared with the tape ------------------------------------------

pub(crate) fn same_shape<S>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape == b.shape {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        })
    }
}

/// `(outer, dim, inner)` extents around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out_shape`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let o = i + rank - shape.len();
        strides[o] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_offset, b_offset)` for every output element.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for out in 0..total {
        f(out, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    let out_shape = broadcast_shape(op, &a.shape, &b.shape)?;
    // Row broadcast (bias add and friends): b repeats over the leading axes of a.
    if out_shape == a.shape && a.shape.ends_with(&b.shape) {
        let n = b.data.len();
        let data = a
            .data
            .chunks(n)
            .flat_map(|row| row.iter().zip(&b.data).map(|(&x, &y)| f(x, y)))
            .collect();
        return Ok(Tensor::from_parts(out_shape, data));
    }
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let total: usize = out_shape.iter().product();
    let mut data = vec![S::zero(); total];
    for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
        data[o] = f(a.data[ia], b.data[ib]);
    });
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to_shape<S: Scalar>(grad: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if grad.shape == shape {
        return grad.clone();
    }
    let len: usize = shape.iter().product();
    let mut data = vec![S::zero(); len];
    if grad.shape.ends_with(shape) {
        for row in grad.data.chunks(len) {
            for (acc, &g) in data.iter_mut().zip(row) {
                *acc += g;
            }
        }
    } else {
        let s = broadcast_strides(shape, &grad.shape);
        let zero = vec![0; grad.shape.len()];
        for_each_broadcast(&grad.shape, &s, &zero, |o, i, _| data[i] += grad.data[o]);
    }
    Tensor::from_parts(shape.to_vec(), data)
}

/// `a[m,k] · b[k,n]`.
pub(crate) fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for (i, orow) in out.chunks_mut(n).enumerate() {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a[m,k] · b[n,k]ᵀ`. Transposing `b` first keeps the inner loop a
/// vectorizable axpy instead of a serial dot product.
pub(crate) fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    matmul_nn(a, &transpose(b, n, k), m, k, n)
}

/// `a[k,m]ᵀ · b[k,n]`.
pub(crate) fn matmul_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose<S: Scalar>(a: &[S], m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Tanh approximation of GELU.
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + S::lit(0.044715) * x * x * x);
    S::lit(0.5) * x * (S::one() + inner.tanh())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = S::lit(0.044715);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (S::one() + S::lit(3.0) * k * x * x);
    S::lit(0.5) * (S::one() + t) + S::lit(0.5) * x * (S::one() - t * t) * dinner
}

/// Returns `(y, xhat, rstd)` for layer normalization over the last axis.
pub(crate) fn layernorm_forward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
    let n = *x.shape.last().ok_or_else(|| Error::invalid("layernorm of rank-0"))?;
    if gain.shape != [n] || bias.shape != [n] {
        return Err(Error::ShapeMismatch {
            op: "layernorm",
            lhs: x.shape.clone(),
            rhs: gain.shape.clone(),
        });
    }
    let nf = S::from_usize_lossy(n);
    let rows = x.data.len() / n.max(1);
    let mut xhat = Vec::with_capacity(x.data.len());
    let mut y = Vec::with_capacity(x.data.len());
    let mut rstds = Vec::with_capacity(rows);
    for row in x.data.chunks(n) {
        let mean = row.iter().fold(S::zero(), |a, &b| a + b) / nf;
        let var = row.iter().fold(S::zero(), |a, &b| a + (b - mean) * (b - mean)) / nf;
        let rstd = S::one() / (var + eps).sqrt();
        rstds.push(rstd);
        for ((&v, &g), &b) in row.iter().zip(&gain.data).zip(&bias.data) {
            let h = (v - mean) * rstd;
            xhat.push(h);
            y.push(h * g + b);
        }
    }
    Ok((
        Tensor::from_parts(x.shape.clone(), y).finite("layernorm")?,
        Tensor::from_parts(x.shape.clone(), xhat),
        rstds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.at2(i, p) * b.at2(p, j);
                }
            }
        }
        t(&[m, n], &out)
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn small_matmul_by_hand() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[0.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn random_matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(11);
        let a = Tensor::<f64>::randn([5, 7], 1.0, &mut rng);
        let b = Tensor::<f64>::randn([7, 3], 1.0, &mut rng);
        let diff = a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)).unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn transposed_kernels_agree() {
        let mut rng = SplitMix64::new(12);
        let a = Tensor::<f64>::randn([4, 6], 1.0, &mut rng);
        let b = Tensor::<f64>::randn([5, 6], 1.0, &mut rng);
        let nt = matmul_nt(a.data(), b.data(), 4, 6, 5);
        let reference = a.matmul(&b.transpose().unwrap()).unwrap();
        for (x, y) in nt.iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Tensor::<f64>::randn([4, 5], 1.0, &mut rng);
        let tn = matmul_tn(a.data(), c.data(), 4, 6, 5);
        let reference = a.transpose().unwrap().matmul(&c).unwrap();
        for (x, y) in tn.iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros([2, 3]);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let s = t(&[3], &[0.0, 0.0, 0.0]).softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = t(&[2], &[1000.0, 0.0]).softmax(0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
        assert!(s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_high_precision_reference() {
        // Reference computed with mpmath at 50 digits.
        let x = t(&[5], &[0.3, -1.7, 2.25, 0.0, -0.4]);
        let expected = [
            0.10636683825388399,
            0.01439518618207236,
            0.7476192750216245,
            0.07879849185478242,
            0.0528202086876367,
        ];
        let s = x.softmax(0).unwrap();
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_along_inner_axis() {
        let x = t(&[2, 2], &[0.0, 1.0, 2.0, 3.0]);
        let s = x.softmax(0).unwrap();
        let e = (1.0f64 / (1.0 + 2f64.exp())).max(0.0);
        assert!((s.at2(0, 0) - e).abs() < 1e-15);
        assert!((s.at2(0, 0) + s.at2(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layernorm_of_constant_is_bias() {
        let x = t(&[1, 4], &[2.5; 4]);
        let g = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[4], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(x.layernorm(&g, &b, 1e-5).unwrap().data(), b.data());
    }

    #[test]
    fn gelu_at_zero() {
        assert_eq!(t(&[1], &[0.0]).gelu().unwrap().data(), &[0.0]);
    }

    #[test]
    fn mean_of_small_array() {
        assert_eq!(t(&[4], &[1.0, 2.0, 3.0, 6.0]).mean(), 3.0);
        assert_eq!(t(&[2], &[3.0, 4.0]).sum_sq(), 25.0);
    }

    #[test]
    fn broadcasting_rules() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let row = t(&[3], &[10.0, 20.0, 30.0]);
        let col = t(&[2, 1], &[100.0, 200.0]);
        assert_eq!(
            a.add(&row).unwrap().data(),
            &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        assert_eq!(
            a.mul(&col).unwrap().data(),
            &[100.0, 200.0, 300.0, 800.0, 1000.0, 1200.0]
        );
        assert_eq!(reduce_to_shape(&a, &[2, 1]).data(), &[6.0, 15.0]);
        assert_eq!(reduce_to_shape(&a, &[3]).data(), &[5.0, 7.0, 9.0]);
        assert!(a.add(&t(&[2], &[1.0, 2.0])).is_err());
    }

    #[test]
    fn concat_and_slice_invert() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.slice(1, 0, 2).unwrap(), a);
        assert_eq!(c.slice(1, 2, 1).unwrap(), b);
        assert!(c.slice(1, 2, 2).is_err());
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(matches!(
            Tensor::new([1], vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        let a = t(&[1], &[1.0]);
        assert!(a.div(&t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let a = Tensor::<f32>::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::new([2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
        let s = a.softmax(1).unwrap();
        assert!((s.data()[0] + s.data()[1] - 1.0).abs() < 1e-6);
    }
}
