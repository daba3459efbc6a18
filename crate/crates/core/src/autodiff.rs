//! Reverse-mode differentiation over the small operator set the codec needs.
//!
//! A [`Tape`] records every node in creation order, which is a topological
//! order of the graph; [`Tape::backward`] walks it once in reverse. Values are
//! per-sample tensors shaped `[channels, time]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Relu,
    #[default]
    Silu,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Identity => T::one(),
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Geometry shared by the strided convolution and its transpose: output
/// column `t` of tap `k` reads source position `t * stride + k - pad`.
#[derive(Debug, Clone, Copy)]
struct Taps {
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Taps {
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        (t * self.stride + k).checked_sub(self.pad)
    }

    /// Gathers `[channels * kernel, cols]` from a `[channels, src_len]` buffer.
    fn im2col<T: Real>(&self, src: &[T], channels: usize, src_len: usize, cols: usize) -> Vec<T> {
        let k = self.kernel;
        let mut out = vec![T::zero(); channels * k * cols];
        for c in 0..channels {
            let row = &src[c * src_len..(c + 1) * src_len];
            for kk in 0..k {
                let dst = &mut out[(c * k + kk) * cols..(c * k + kk + 1) * cols];
                if self.stride == 1 {
                    // Contiguous copy of the in-range part.
                    let lo = self.pad.saturating_sub(kk);
                    let hi = (src_len + self.pad).saturating_sub(kk).min(cols);
                    if lo < hi {
                        let s0 = lo + kk - self.pad;
                        dst[lo..hi].copy_from_slice(&row[s0..s0 + (hi - lo)]);
                    }
                } else {
                    for (t, d) in dst.iter_mut().enumerate() {
                        if let Some(s) = self.source(t, kk) {
                            if s < src_len {
                                *d = row[s];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Taps::im2col`]: scatter-adds columns back into `dst`.
    fn col2im<T: Real>(&self, cols_buf: &[T], channels: usize, dst: &mut [T], dst_len: usize, cols: usize) {
        let k = self.kernel;
        for c in 0..channels {
            let row = &mut dst[c * dst_len..(c + 1) * dst_len];
            for kk in 0..k {
                let src = &cols_buf[(c * k + kk) * cols..(c * k + kk + 1) * cols];
                for (t, &v) in src.iter().enumerate() {
                    if let Some(s) = self.source(t, kk) {
                        if s < dst_len {
                            row[s] = row[s] + v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, taps: Taps, cols: Vec<T> },
    ConvTranspose { x: NodeId, w: NodeId, b: Option<NodeId>, taps: Taps },
    Act { x: NodeId, kind: Activation },
    Add { a: NodeId, b: NodeId },
    StraightThrough { z: NodeId },
    NormalizeColumns { x: NodeId, eps: T },
    Loss { pred: NodeId, grad: Tensor<T> },
    WeightedSum { terms: Vec<(NodeId, T)> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable input; gradients are reported for it.
    pub fn parameter(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a loss-like node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    /// 1-D convolution of `x: [in, len]` with `w: [out, in, kernel]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || stride == 0 {
            return Err(Error::ShapeMismatch { expected: vec![ws.get(1).copied().unwrap_or(0), 0], actual: xs });
        }
        let (cin, len) = (xs[0], xs[1]);
        let (cout, kernel) = (ws[0], ws[2]);
        if len + 2 * pad < kernel {
            return Err(Error::invalid(format!("sequence of {len} frames too short for kernel {kernel}")));
        }
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let taps = Taps { kernel, stride, pad };
        let cols = taps.im2col(self.value(x).data(), cin, len, out_len);
        let mut out = self.bias_init(b, cout, out_len)?;
        T::gemm(
            cout,
            cin * kernel,
            out_len,
            T::one(),
            self.value(w).data(),
            (cin * kernel) as isize,
            1,
            &cols,
            out_len as isize,
            1,
            T::one(),
            out.data_mut(),
            out_len as isize,
            1,
        );
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv { x, w, b, taps, cols }, rg))
    }

    /// Transposed 1-D convolution of `x: [in, len]` with `w: [in, out, kernel]`;
    /// output length is `(len - 1) * stride - 2 * pad + kernel`.
    pub fn conv_transpose1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 3 || ws[0] != xs[0] || stride == 0 {
            return Err(Error::ShapeMismatch { expected: vec![ws.first().copied().unwrap_or(0), 0], actual: xs });
        }
        let (cin, len) = (xs[0], xs[1]);
        let (cout, kernel) = (ws[1], ws[2]);
        let full = (len.max(1) - 1) * stride + kernel;
        if len == 0 || full < 2 * pad + 1 {
            return Err(Error::invalid("transposed convolution output would be empty"));
        }
        let out_len = full - 2 * pad;
        let taps = Taps { kernel, stride, pad };
        let ok = cout * kernel;
        let mut cols = vec![T::zero(); ok * len];
        T::gemm(
            ok,
            cin,
            len,
            T::one(),
            self.value(w).data(),
            1,
            ok as isize,
            self.value(x).data(),
            len as isize,
            1,
            T::zero(),
            &mut cols,
            len as isize,
            1,
        );
        let mut out = self.bias_init(b, cout, out_len)?;
        taps.col2im(&cols, cout, out.data_mut(), out_len, len);
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::ConvTranspose { x, w, b, taps }, rg))
    }

    fn bias_init(&self, b: Option<NodeId>, cout: usize, out_len: usize) -> Result<Tensor<T>> {
        let mut out = Tensor::zeros(&[cout, out_len]);
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != cout {
                return Err(Error::ShapeMismatch { expected: vec![cout], actual: bias.shape().to_vec() });
            }
            for (o, &bv) in bias.data().iter().enumerate() {
                out.data_mut()[o * out_len..(o + 1) * out_len].fill(bv);
            }
        }
        Ok(out)
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let out = self.value(x).map(|v| kind.apply(v));
        let rg = self.needs(x);
        self.push(out, Op::Act { x, kind }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                expected: self.value(a).shape().to_vec(),
                actual: self.value(b).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Column-wise `x_t / sqrt(|x_t|² + eps)` for `x: [rows, cols]`.
    /// Smooth everywhere and maps a zero column to zero.
    pub fn normalize_columns(&mut self, x: NodeId, eps: T) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::invalid("normalize_columns expects a matrix"));
        }
        let (rows, cols) = (xv.dim(0), xv.dim(1));
        let mut out = xv.clone();
        for t in 0..cols {
            let n2: T = (0..rows).map(|r| xv.data()[r * cols + t] * xv.data()[r * cols + t]).sum();
            let inv = T::one() / (n2 + eps).sqrt();
            for r in 0..rows {
                let v = &mut out.data_mut()[r * cols + t];
                *v = *v * inv;
            }
        }
        let rg = self.needs(x);
        Ok(self.push(out, Op::NormalizeColumns { x, eps }, rg))
    }

    /// Forward value `quantized`, backward identity to `z`:
    /// `z + stopgrad(quantized - z)`.
    pub fn straight_through(&mut self, z: NodeId, quantized: Tensor<T>) -> Result<NodeId> {
        if quantized.shape() != self.value(z).shape() {
            return Err(Error::ShapeMismatch {
                expected: self.value(z).shape().to_vec(),
                actual: quantized.shape().to_vec(),
            });
        }
        let rg = self.needs(z);
        Ok(self.push(quantized, Op::StraightThrough { z }, rg))
    }

    /// Scalar node whose value and gradient with respect to `pred` were
    /// computed by a closed-form loss.
    pub fn loss(&mut self, pred: NodeId, value: T, grad: Tensor<T>) -> Result<NodeId> {
        if grad.shape() != self.value(pred).shape() {
            return Err(Error::ShapeMismatch {
                expected: self.value(pred).shape().to_vec(),
                actual: grad.shape().to_vec(),
            });
        }
        let rg = self.needs(pred);
        Ok(self.push(Tensor::scalar(value), Op::Loss { pred, grad }, rg))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> NodeId {
        let v = terms.iter().map(|&(id, w)| w * self.scalar(id)).sum();
        let rg = terms.iter().any(|&(id, _)| self.needs(id));
        self.push(Tensor::scalar(v), Op::WeightedSum { terms: terms.to_vec() }, rg)
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid("backward needs a scalar root"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b, taps, cols } => {
                    let (cin, len) = (self.value(*x).dim(0), self.value(*x).dim(1));
                    let (cout, out_len) = (g.dim(0), g.dim(1));
                    let ik = cin * taps.kernel;
                    if self.needs(*w) {
                        let mut dw = Tensor::zeros(self.value(*w).shape());
                        T::gemm(
                            cout,
                            out_len,
                            ik,
                            T::one(),
                            g.data(),
                            out_len as isize,
                            1,
                            cols,
                            1,
                            out_len as isize,
                            T::zero(),
                            dw.data_mut(),
                            ik as isize,
                            1,
                        );
                        accumulate(&mut grads, *w, dw);
                    }
                    if let Some(b) = b.filter(|b| self.needs(*b)) {
                        accumulate(&mut grads, b, row_sums(&g));
                    }
                    if self.needs(*x) {
                        let mut dcols = vec![T::zero(); ik * out_len];
                        T::gemm(
                            ik,
                            cout,
                            out_len,
                            T::one(),
                            self.value(*w).data(),
                            1,
                            ik as isize,
                            g.data(),
                            out_len as isize,
                            1,
                            T::zero(),
                            &mut dcols,
                            out_len as isize,
                            1,
                        );
                        let mut dx = Tensor::zeros(&[cin, len]);
                        taps.col2im(&dcols, cin, dx.data_mut(), len, out_len);
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::ConvTranspose { x, w, b, taps } => {
                    let (cin, len) = (self.value(*x).dim(0), self.value(*x).dim(1));
                    let (cout, out_len) = (g.dim(0), g.dim(1));
                    let ok = cout * taps.kernel;
                    let dcols = taps.im2col(g.data(), cout, out_len, len);
                    if self.needs(*w) {
                        let mut dw = Tensor::zeros(self.value(*w).shape());
                        T::gemm(
                            cin,
                            len,
                            ok,
                            T::one(),
                            self.value(*x).data(),
                            len as isize,
                            1,
                            &dcols,
                            1,
                            len as isize,
                            T::zero(),
                            dw.data_mut(),
                            ok as isize,
                            1,
                        );
                        accumulate(&mut grads, *w, dw);
                    }
                    if let Some(b) = b.filter(|b| self.needs(*b)) {
                        accumulate(&mut grads, b, row_sums(&g));
                    }
                    if self.needs(*x) {
                        let mut dx = Tensor::zeros(&[cin, len]);
                        T::gemm(
                            cin,
                            ok,
                            len,
                            T::one(),
                            self.value(*w).data(),
                            ok as isize,
                            1,
                            &dcols,
                            len as isize,
                            1,
                            T::zero(),
                            dx.data_mut(),
                            len as isize,
                            1,
                        );
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *d = *d * kind.derivative(v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::StraightThrough { z } => accumulate(&mut grads, *z, g.clone()),
                Op::NormalizeColumns { x, eps } => {
                    // d/dx (x/s) = g/s − x (x·g)/s³ with s = sqrt(|x|² + eps)
                    let xv = self.value(*x);
                    let (rows, cols) = (xv.dim(0), xv.dim(1));
                    let mut dx = Tensor::zeros(xv.shape());
                    for t in 0..cols {
                        let at = |r: usize| r * cols + t;
                        let n2: T = (0..rows).map(|r| xv.data()[at(r)] * xv.data()[at(r)]).sum();
                        let xg: T = (0..rows).map(|r| xv.data()[at(r)] * g.data()[at(r)]).sum();
                        let s = (n2 + *eps).sqrt();
                        let s3 = s * s * s;
                        for r in 0..rows {
                            dx.data_mut()[at(r)] = g.data()[at(r)] / s - xv.data()[at(r)] * xg / s3;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Loss { pred, grad } => {
                    let mut dp = grad.clone();
                    dp.scale(g.data()[0]);
                    accumulate(&mut grads, *pred, dp);
                }
                Op::WeightedSum { terms } => {
                    for &(id, w) in terms {
                        if self.needs(id) {
                            accumulate(&mut grads, id, Tensor::scalar(w * g.data()[0]));
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn row_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let cols = g.dim(1);
    let sums = (0..g.dim(0)).map(|r| g.data()[r * cols..(r + 1) * cols].iter().copied().sum()).collect();
    Tensor::from_vec(&[g.dim(0)], sums).expect("row count matches")
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `id`, or `None` if the root does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}
