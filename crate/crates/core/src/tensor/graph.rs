//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its value, so the tape is already in
//! topological order; `backward` walks it once from the loss back to the
//! leaves, accumulating cotangents additively across fan-out.

use super::activation::Activation;
use super::fft::{mode_count, RealFft};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Neg(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    SwapLast2(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    Dot(Var, Var),
    Act(Activation, Var),
    Rfft(Var),
    Irfft(Var),
    SpectralMix(Var, Var),
    Sum(Var),
    Mean(Var),
    SqNorm(Var),
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Build one per forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `t` as a leaf; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push_leaf(t.shape().to_vec(), t.into_data(), false))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::MatMul(a, b)
            | Op::Dot(a, b)
            | Op::SpectralMix(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Neg(a)
            | Op::Transpose(a)
            | Op::SwapLast2(a)
            | Op::Reshape(a)
            | Op::SliceCols(a, _)
            | Op::Act(_, a)
            | Op::Rfft(a)
            | Op::Irfft(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SqNorm(a) => vec![*a],
            Op::ConcatRows(vs) => vs.clone(),
        }
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("graph values are finite and shaped")
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(name, self.shape(a).to_vec(), value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| x * s).collect();
        self.push("scale", self.shape(a).to_vec(), value, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| -x).collect();
        self.push("neg", self.shape(a).to_vec(), value, Op::Neg(a))
    }

    /// `x[r×c] + bias[c]`, bias repeated over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims("add_bias", x)?;
        if self.shape(bias) != [cols] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for {rows}×{cols}", self.shape(bias)),
            ));
        }
        let b = self.value(bias);
        let value = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        self.push("add_bias", vec![rows, cols], value, Op::AddBias(x, bias))
    }

    fn matrix_dims(&self, name: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(name, format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}×{k} by {k2}×{n}")));
        }
        let value = linalg::matmul(self.value(a), self.value(b), m, k, n);
        self.push("matmul", vec![m, n], value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", a)?;
        let value = linalg::transpose(self.value(a), r, c);
        self.push("transpose", vec![c, r], value, Op::Transpose(a))
    }

    /// `[b, m, n] -> [b, n, m]`.
    pub fn swap_last2(&mut self, a: Var) -> Result<Var> {
        let [b, m, n] = *self.shape(a) else {
            return Err(Error::shape("swap_last2", format!("expected rank 3, got {:?}", self.shape(a))));
        };
        let src = self.value(a);
        let mut value = Vec::with_capacity(src.len());
        for blk in src.chunks(m * n) {
            value.extend(linalg::transpose(blk, m, n));
        }
        self.push("swap_last2", vec![b, n, m], value, Op::SwapLast2(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let value = self.value(a).to_vec();
        self.push("reshape", shape.to_vec(), value, Op::Reshape(a))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("slice_cols", a)?;
        if width == 0 || start + width > c {
            return Err(Error::shape("slice_cols", format!("{start}+{width} of {c} columns")));
        }
        let value = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        self.push("slice_cols", vec![r, width], value, Op::SliceCols(a, start))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let (_, c) = self.matrix_dims("concat_rows", first)?;
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let (r, c2) = self.matrix_dims("concat_rows", p)?;
            if c2 != c {
                return Err(Error::shape("concat_rows", format!("{c2} vs {c} columns")));
            }
            rows += r;
            value.extend_from_slice(self.value(p));
        }
        self.push("concat_rows", vec![rows, c], value, Op::ConcatRows(parts.to_vec()))
    }

    /// Inner product of two equal-length vectors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::shape(
                "dot",
                format!("lengths {} and {}", self.value(a).len(), self.value(b).len()),
            ));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).sum();
        self.push("dot", vec![1], vec![s], Op::Dot(a, b))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        self.push(kind.name(), self.shape(x).to_vec(), value, Op::Act(kind, x))
    }

    /// Real FFT along the last axis: `[.., n] -> [.., n/2+1, 2]` with (re, im) pairs.
    pub fn rfft(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if n < 2 {
            return Err(Error::shape("rfft", format!("signal length {n} < 2")));
        }
        let modes = mode_count(n);
        let mut fft = RealFft::new(n);
        let src = self.value(x);
        let mut value = vec![T::zero(); src.len() / n * modes * 2];
        for (row, out) in src.chunks(n).zip(value.chunks_mut(2 * modes)) {
            fft.forward(row, out);
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = modes;
        shape.push(2);
        self.push("rfft", shape, value, Op::Rfft(x))
    }

    /// Inverse of [`rfft`](Self::rfft): `[.., n/2+1, 2] -> [.., n]`.
    pub fn irfft(&mut self, x: Var, n: usize) -> Result<Var> {
        let shape = self.shape(x);
        let rank = shape.len();
        if rank < 2 || shape[rank - 1] != 2 || n < 2 || shape[rank - 2] != mode_count(n) {
            return Err(Error::shape("irfft", format!("{shape:?} to length {n}")));
        }
        let modes = mode_count(n);
        let mut fft = RealFft::new(n);
        let src = self.value(x);
        let mut value = vec![T::zero(); src.len() / (2 * modes) * n];
        for (spec, out) in src.chunks(2 * modes).zip(value.chunks_mut(n)) {
            fft.inverse(spec, out);
        }
        let mut out_shape = shape[..rank - 1].to_vec();
        *out_shape.last_mut().unwrap() = n;
        self.push("irfft", out_shape, value, Op::Irfft(x))
    }

    /// Per-mode complex channel mixing of a truncated spectrum.
    ///
    /// `x: [b, c_in, modes, 2]`, `w: [c_in, c_out, k_max, 2]` gives
    /// `[b, c_out, modes, 2]` where mode `k < k_max` is `Σ_i x[i,k]·w[i,o,k]`
    /// and every higher mode is zero.
    pub fn spectral_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let [b, cin, modes, 2] = *self.shape(x) else {
            return Err(Error::shape("spectral_mix", format!("input {:?}", self.shape(x))));
        };
        let [cin2, cout, kmax, 2] = *self.shape(w) else {
            return Err(Error::shape("spectral_mix", format!("weights {:?}", self.shape(w))));
        };
        if cin != cin2 {
            return Err(Error::shape("spectral_mix", format!("{cin} input channels vs weights for {cin2}")));
        }
        if kmax > modes {
            return Err(Error::shape("spectral_mix", format!("k_max {kmax} exceeds {modes} available modes")));
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut value = vec![T::zero(); b * cout * modes * 2];
        for bi in 0..b {
            for i in 0..cin {
                let xrow = &xv[(bi * cin + i) * modes * 2..];
                for o in 0..cout {
                    let wrow = &wv[(i * cout + o) * kmax * 2..];
                    let out = &mut value[(bi * cout + o) * modes * 2..];
                    for k in 0..kmax {
                        let (xr, xi) = (xrow[2 * k], xrow[2 * k + 1]);
                        let (wr, wi) = (wrow[2 * k], wrow[2 * k + 1]);
                        out[2 * k] = out[2 * k] + xr * wr - xi * wi;
                        out[2 * k + 1] = out[2 * k + 1] + xr * wi + xi * wr;
                    }
                }
            }
        }
        self.push("spectral_mix", vec![b, cout, modes, 2], value, Op::SpectralMix(x, w))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize_lossy(self.value(x).len());
        let s: T = self.value(x).iter().copied().sum();
        self.push("mean", vec![1], vec![s / n], Op::Mean(x))
    }

    /// Σ xᵢ².
    pub fn sq_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().map(|&v| v * v).sum();
        self.push("sq_norm", vec![1], vec![s], Op::SqNorm(x))
    }

    /// Propagates d(loss)/d(node) to every node that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("already run; call reset_grads first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(contribution).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let shape = std::mem::take(&mut self.nodes[i].shape);
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            &Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.iter().map(|&x| -x).collect());
            }
            &Op::Mul(a, b) => {
                let ga = if self.wants(a) {
                    g.iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect()
                } else {
                    vec![]
                };
                let gb = if self.wants(b) {
                    g.iter().zip(self.value(a)).map(|(&x, &y)| x * y).collect()
                } else {
                    vec![]
                };
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Scale(a, s) => self.accumulate(a, g.iter().map(|&x| x * s).collect()),
            &Op::Neg(a) => self.accumulate(a, g.iter().map(|&x| -x).collect()),
            &Op::AddBias(x, b) => {
                let cols = shape[1];
                let mut gb = vec![T::zero(); cols];
                for row in g.chunks(cols) {
                    gb.iter_mut().zip(row).for_each(|(s, &v)| *s = *s + v);
                }
                self.accumulate(x, g.to_vec());
                self.accumulate(b, gb);
            }
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let ga = if self.wants(a) {
                    linalg::matmul_a_bt(g, self.value(b), m, n, k)
                } else {
                    vec![]
                };
                let gb = if self.wants(b) {
                    linalg::matmul_at_b(self.value(a), g, m, k, n)
                } else {
                    vec![]
                };
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Transpose(a) => {
                let (r, c) = (shape[0], shape[1]);
                self.accumulate(a, linalg::transpose(g, r, c));
            }
            &Op::SwapLast2(a) => {
                let (m, n) = (shape[1], shape[2]);
                let mut ga = Vec::with_capacity(g.len());
                for blk in g.chunks(m * n) {
                    ga.extend(linalg::transpose(blk, m, n));
                }
                self.accumulate(a, ga);
            }
            &Op::Reshape(a) => self.accumulate(a, g.to_vec()),
            &Op::SliceCols(a, start) => {
                let width = shape[1];
                let cols = self.shape(a)[1];
                let mut ga = vec![T::zero(); self.value(a).len()];
                for (dst, src) in ga.chunks_mut(cols).zip(g.chunks(width)) {
                    dst[start..start + width].copy_from_slice(src);
                }
                self.accumulate(a, ga);
            }
            &Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            &Op::Dot(a, b) => {
                let s = g[0];
                let ga = self.value(b).iter().map(|&v| v * s).collect();
                let gb = self.value(a).iter().map(|&v| v * s).collect();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Act(kind, x) => {
                let gx = g
                    .iter()
                    .zip(self.value(x))
                    .map(|(&gv, &xv)| gv * kind.derivative(xv))
                    .collect();
                self.accumulate(x, gx);
            }
            &Op::Rfft(x) => {
                let n = *self.shape(x).last().unwrap();
                let modes = mode_count(n);
                let mut fft = RealFft::new(n);
                let mut gx = vec![T::zero(); self.value(x).len()];
                for (spec, out) in g.chunks(2 * modes).zip(gx.chunks_mut(n)) {
                    fft.forward_adjoint(spec, out);
                }
                self.accumulate(x, gx);
            }
            &Op::Irfft(x) => {
                let n = *shape.last().unwrap();
                let modes = mode_count(n);
                let mut fft = RealFft::new(n);
                let mut gx = vec![T::zero(); self.value(x).len()];
                for (sig, out) in g.chunks(n).zip(gx.chunks_mut(2 * modes)) {
                    fft.inverse_adjoint(sig, out);
                }
                self.accumulate(x, gx);
            }
            &Op::SpectralMix(x, w) => {
                let [b, cin, modes, _] = *self.shape(x) else { unreachable!() };
                let [_, cout, kmax, _] = *self.shape(w) else { unreachable!() };
                let xv = self.value(x);
                let wv = self.value(w);
                let mut gx = vec![T::zero(); xv.len()];
                let mut gw = vec![T::zero(); wv.len()];
                for bi in 0..b {
                    for i in 0..cin {
                        let xoff = (bi * cin + i) * modes * 2;
                        for o in 0..cout {
                            let woff = (i * cout + o) * kmax * 2;
                            let goff = (bi * cout + o) * modes * 2;
                            for k in 0..kmax {
                                let (gr, gi) = (g[goff + 2 * k], g[goff + 2 * k + 1]);
                                let (xr, xi) = (xv[xoff + 2 * k], xv[xoff + 2 * k + 1]);
                                let (wr, wi) = (wv[woff + 2 * k], wv[woff + 2 * k + 1]);
                                // g·conj(w) and g·conj(x)
                                gx[xoff + 2 * k] = gx[xoff + 2 * k] + gr * wr + gi * wi;
                                gx[xoff + 2 * k + 1] = gx[xoff + 2 * k + 1] + gi * wr - gr * wi;
                                gw[woff + 2 * k] = gw[woff + 2 * k] + gr * xr + gi * xi;
                                gw[woff + 2 * k + 1] = gw[woff + 2 * k + 1] + gi * xr - gr * xi;
                            }
                        }
                    }
                }
                self.accumulate(x, gx);
                self.accumulate(w, gw);
            }
            &Op::Sum(x) => {
                let len = self.value(x).len();
                self.accumulate(x, vec![g[0]; len]);
            }
            &Op::Mean(x) => {
                let len = self.value(x).len();
                let s = g[0] / T::from_usize_lossy(len);
                self.accumulate(x, vec![s; len]);
            }
            &Op::SqNorm(x) => {
                let two = T::lit(2.0) * g[0];
                let gx = self.value(x).iter().map(|&v| v * two).collect();
                self.accumulate(x, gx);
            }
        }
        self.nodes[i].shape = shape;
        self.nodes[i].op = op;
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `t`'s gradient buffer.
    pub fn write_grad(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }
}

mod linalg {
    use crate::scalar::Scalar;

    pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = a[i * k + p];
                if s == T::zero() {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o = *o + s * bv;
                }
            }
        }
        out
    }

    /// `g[m×n] · bᵀ` for `b: [k×n]`.
    pub fn matmul_a_bt<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * k];
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                out[i * k + p] = grow.iter().zip(&b[p * n..(p + 1) * n]).map(|(&x, &y)| x * y).sum();
            }
        }
        out
    }

    /// `aᵀ · g` for `a: [m×k]`, `g: [m×n]`.
    pub fn matmul_at_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); k * n];
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let s = a[i * k + p];
                if s == T::zero() {
                    continue;
                }
                for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *o = *o + s * gv;
                }
            }
        }
        out
    }

    pub fn transpose<T: Scalar>(a: &[T], r: usize, c: usize) -> Vec<T> {
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[2], &[1.0, 2.0]));
        let b = g.constant(&t(&[2], &[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s), &[4.0, 6.0]);
        let c = g.constant(&t(&[2], &[1.0, -2.0]));
        let h = g.scale(c, 0.5).unwrap();
        assert_eq!(g.value(h), &[0.5, -1.0]);
        let odd = g.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, odd), Err(Error::Shape { .. })));
    }

    #[test]
    fn mul_by_zeros_annihilates_value_and_grad() {
        let mut g = Graph::new();
        let x = g.param(&t(&[3], &[1.0, -2.0, 5.0]));
        let z = g.constant(&Tensor::zeros(&[3]));
        let y = g.mul(x, z).unwrap();
        assert_eq!(g.value(y), &[0.0; 3]);
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = g.constant(&t(&[2, 1], &[1.0, 1.0]));
        let p = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(p), &[3.0, 7.0]);
        let eye = g.constant(&Tensor::eye(2));
        let q = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(q), g.value(a));
        assert!(g.matmul(ones, ones).is_err());
    }

    #[test]
    fn dot_examples() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        let b = g.constant(&t(&[3], &[4.0, 5.0, 6.0]));
        let e = g.constant(&t(&[3], &[0.0, 0.0, 1.0]));
        let z = g.constant(&Tensor::zeros(&[3]));
        let d = g.dot(a, b).unwrap();
        assert_eq!(g.item(d), 32.0);
        let d = g.dot(e, b).unwrap();
        assert_eq!(g.item(d), 6.0);
        let d = g.dot(z, b).unwrap();
        assert_eq!(g.item(d), 0.0);
        let short = g.constant(&t(&[2], &[1.0, 1.0]));
        assert!(g.dot(a, short).is_err());
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let x = g.param(&t(&[2], &[3.0, 4.0]));
        let n = g.sq_norm(x).unwrap();
        assert_eq!(g.item(n), 25.0);
        g.backward(n).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0, 8.0]);
        let c = g.constant(&Tensor::filled(&[2, 3], 1.5));
        let m = g.mean(c).unwrap();
        assert_eq!(g.item(m), 1.5);
    }

    #[test]
    fn backward_sq_norm_and_fan_out() {
        let mut g = Graph::new();
        let x = g.param(&t(&[2], &[1.0, 2.0]));
        let l = g.sq_norm(x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);

        let mut g = Graph::new();
        let x = g.param(&t(&[1], &[3.0]));
        let y = g.add(x, x).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.param(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Backward(_))));
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::Backward(_))));
        g.reset_grads();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[1], &[1e300]));
        let err = g.mul(x, x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "mul" }));
    }

    #[test]
    fn write_grad_fills_tensor_buffer() {
        let mut p = t(&[2], &[1.0, -1.0]).with_requires_grad(true);
        let mut g = Graph::new();
        let x = g.leaf(&p);
        let l = g.sq_norm(x).unwrap();
        g.backward(l).unwrap();
        g.write_grad(x, &mut p).unwrap();
        assert_eq!(p.grad().unwrap(), &[2.0, -2.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let c = g.constant(&t(&[2], &[1.0, 2.0]));
        let x = g.param(&t(&[2], &[1.0, 2.0]));
        let y = g.mul(c, x).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
