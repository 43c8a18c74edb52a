//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to tensors created on it.
//! Calling [`Tensor::backward`] on a scalar walks the tape once in
//! reverse creation order and accumulates gradients (summing on reuse)
//! into every tracked tensor. The element type is generic: `f32` for
//! training speed, `f64` for finite-difference verification.
//!
//! Tensors are row-major. Broadcasting is restricted to the bias style:
//! the right-hand operand's shape must be a trailing suffix of the
//! left-hand operand's shape. No operation mutates its inputs.

use std::cell::RefCell;
use std::rc::Rc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type for tensor math: `f32` or `f64`.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Given the output gradient, produce one gradient contribution per parent.
/// An empty vec for a parent means "no contribution" (parent untracked).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
}

/// Records primitive applications for one forward/backward pass.
///
/// A tape and its tensors are confined to one thread; independent runs
/// use independent tapes.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one recorded tensor on a [`Tape`].
pub struct Tensor<T: Scalar> {
    tape: Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { tape: self.tape.clone(), id: self.id }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Iterate lanes along `axis`: yields (base offset, stride) pairs; lane
/// element i lives at `base + i * stride`.
fn lanes(shape: &[usize], axis: usize) -> impl Iterator<Item = (usize, usize)> {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (0..outer).flat_map(move |o| (0..stride).map(move |s| (o * len * stride + s, stride)))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })) }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Create a leaf tensor, optionally tracked for gradients.
    pub fn leaf(&self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor<T>> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in shape {:?}", shape)));
        }
        Ok(self.push(data, shape.to_vec(), requires_grad, Vec::new(), None))
    }

    /// Untracked constant.
    pub fn constant(&self, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&self, v: T) -> Tensor<T> {
        self.push(vec![v], vec![1], false, Vec::new(), None)
    }

    fn push(
        &self,
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Tensor<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { data, shape, grad: None, requires_grad, parents, backward });
        Tensor { tape: self.clone(), id }
    }

    /// Concatenate tensors along `axis`.
    pub fn concat(&self, xs: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if xs.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let first = xs[0].shape();
        let rank = first.len();
        if axis >= rank {
            return Err(Error::shape(format!("concat axis {} out of range for rank {}", axis, rank)));
        }
        for x in xs {
            let s = x.shape();
            if s.len() != rank
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!(
                    "concat shape mismatch: {:?} vs {:?} along axis {}",
                    s, first, axis
                )));
            }
        }
        let axis_total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner_sz: usize = first[axis + 1..].iter().product();

        let mut out = vec![T::zero(); numel(&out_shape)];
        let parts: Vec<(usize, Vec<T>)> = xs.iter().map(|x| (x.shape()[axis], x.data())).collect();
        for o in 0..outer {
            let mut off = 0;
            for (alen, pdata) in &parts {
                let chunk = alen * inner_sz;
                let dst = o * axis_total * inner_sz + off * inner_sz;
                let src = o * chunk;
                out[dst..dst + chunk].copy_from_slice(&pdata[src..src + chunk]);
                off += alen;
            }
        }

        let parents: Vec<usize> = xs.iter().map(|x| x.id).collect();
        let track = xs.iter().any(|x| x.requires_grad());
        let sizes: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
        let backward: Option<BackwardFn<T>> = if track {
            Some(Box::new(move |g: &[T]| {
                let mut grads: Vec<Vec<T>> =
                    sizes.iter().map(|&a| vec![T::zero(); outer * a * inner_sz]).collect();
                for o in 0..outer {
                    let mut off = 0;
                    for (k, &alen) in sizes.iter().enumerate() {
                        let chunk = alen * inner_sz;
                        let src = o * axis_total * inner_sz + off * inner_sz;
                        let dst = o * chunk;
                        grads[k][dst..dst + chunk].copy_from_slice(&g[src..src + chunk]);
                        off += alen;
                    }
                }
                grads
            }))
        } else {
            None
        };
        Ok(self.push(out, out_shape, track, parents, backward))
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn data(&self) -> Vec<T> {
        self.tape.inner.borrow().nodes[self.id].data.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient, if this tensor is tracked and backward ran.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn item(&self) -> T {
        self.tape.inner.borrow().nodes[self.id].data[0]
    }

    fn record(
        &self,
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<usize>,
        track: bool,
        backward: BackwardFn<T>,
    ) -> Tensor<T> {
        let bw: Option<BackwardFn<T>> = if track { Some(backward) } else { None };
        self.tape.push(data, shape, track, parents, bw)
    }

    fn same_tape(&self, other: &Tensor<T>) -> Result<()> {
        if !Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            return Err(Error::invalid("tensors belong to different tapes"));
        }
        Ok(())
    }

    /// Reinterpret the data with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {:?}",
                self.shape(),
                shape
            )));
        }
        let track = self.requires_grad();
        Ok(self.record(
            self.data(),
            shape.to_vec(),
            vec![self.id],
            track,
            Box::new(move |g: &[T]| vec![g.to_vec()]),
        ))
    }

    fn broadcast_check(a: &[usize], b: &[usize]) -> Result<()> {
        if b.len() > a.len() || a[a.len() - b.len()..] != *b {
            return Err(Error::shape(format!(
                "shapes {:?} and {:?} are not addable (rhs must be a trailing suffix)",
                a, b
            )));
        }
        Ok(())
    }

    /// Elementwise sum; `other` may be a trailing-suffix broadcast (bias style).
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_tape(other)?;
        let (sa, sb) = (self.shape(), other.shape());
        Self::broadcast_check(&sa, &sb)?;
        let (a, b) = (self.data(), other.data());
        let bn = b.len();
        let out: Vec<T> = a.iter().enumerate().map(|(i, &x)| x + b[i % bn]).collect();
        let track = self.requires_grad() || other.requires_grad();
        let an = a.len();
        Ok(self.record(
            out,
            sa,
            vec![self.id, other.id],
            track,
            Box::new(move |g: &[T]| {
                let ga = g.to_vec();
                let mut gb = vec![T::zero(); bn];
                for i in 0..an {
                    gb[i % bn] = gb[i % bn] + g[i];
                }
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise (Hadamard) product; same broadcast rule as [`Tensor::add`].
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_tape(other)?;
        let (sa, sb) = (self.shape(), other.shape());
        Self::broadcast_check(&sa, &sb)?;
        let (a, b) = (self.data(), other.data());
        let bn = b.len();
        let out: Vec<T> = a.iter().enumerate().map(|(i, &x)| x * b[i % bn]).collect();
        let track = self.requires_grad() || other.requires_grad();
        Ok(self.record(
            out,
            sa,
            vec![self.id, other.id],
            track,
            Box::new(move |g: &[T]| {
                let ga: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * b[i % bn]).collect();
                let mut gb = vec![T::zero(); bn];
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % bn] = gb[i % bn] + gi * a[i];
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.add(&other.scale(-T::one()))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| x * c).collect();
        let track = self.requires_grad();
        self.record(
            out,
            self.shape(),
            vec![self.id],
            track,
            Box::new(move |g: &[T]| vec![g.iter().map(|&gi| gi * c).collect()]),
        )
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_tape(other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul shapes {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (a, b) = (self.data(), other.data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + aip * brow[j];
                }
            }
        }
        let track = self.requires_grad() || other.requires_grad();
        Ok(self.record(
            out,
            vec![m, n],
            vec![self.id, other.id],
            track,
            Box::new(move |g: &[T]| {
                // dA = g . B^T ; dB = A^T . g
                let mut ga = vec![T::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = T::zero();
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &b[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc = acc + grow[j] * brow[j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                let mut gb = vec![T::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        let gbrow = &mut gb[p * n..(p + 1) * n];
                        for j in 0..n {
                            gbrow[j] = gbrow[j] + aip * grow[j];
                        }
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose expects rank 2, got {:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let a = self.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        let track = self.requires_grad();
        Ok(self.record(
            out,
            vec![n, m],
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                let mut ga = vec![T::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                vec![ga]
            }),
        ))
    }

    /// `x . w + b` applied row-wise.
    pub fn affine(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul(w)?.add(b)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "softmax axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let x = self.data();
        let len = shape[axis];
        let mut out = vec![T::zero(); x.len()];
        for (base, stride) in lanes(&shape, axis) {
            let mut mx = T::neg_infinity();
            for i in 0..len {
                mx = mx.max(x[base + i * stride]);
            }
            let mut sum = T::zero();
            for i in 0..len {
                let e = (x[base + i * stride] - mx).exp();
                out[base + i * stride] = e;
                sum = sum + e;
            }
            for i in 0..len {
                out[base + i * stride] = out[base + i * stride] / sum;
            }
        }
        let track = self.requires_grad();
        let y = out.clone();
        let shape_c = shape.clone();
        Ok(self.record(
            out,
            shape,
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                // dx = y * (g - sum(g * y)) per lane
                let mut gx = vec![T::zero(); g.len()];
                for (base, stride) in lanes(&shape_c, axis) {
                    let mut dot = T::zero();
                    for i in 0..len {
                        let idx = base + i * stride;
                        dot = dot + g[idx] * y[idx];
                    }
                    for i in 0..len {
                        let idx = base + i * stride;
                        gx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let shape = self.shape();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm on rank-0 tensor"))?;
        if d == 0 {
            return Err(Error::shape("layer_norm over zero-length axis"));
        }
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm params must be [{}], got {:?} / {:?}",
                d,
                gamma.shape(),
                beta.shape()
            )));
        }
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let rows = x.len() / d;
        let dn = T::from_f64(d as f64);
        let mut out = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstds = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dn;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let rstd = (var + eps).sqrt().recip();
            rstds[r] = rstd;
            for j in 0..d {
                let h = (row[j] - mean) * rstd;
                xhat[r * d + j] = h;
                out[r * d + j] = gm[j] * h + bt[j];
            }
        }
        let track = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.record(
            out,
            shape,
            vec![self.id, gamma.id, beta.id],
            track,
            Box::new(move |g: &[T]| {
                let mut gx = vec![T::zero(); g.len()];
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                for r in 0..rows {
                    let mut sum_gy = T::zero();
                    let mut sum_gyh = T::zero();
                    for j in 0..d {
                        let idx = r * d + j;
                        let gy = g[idx] * gm[j];
                        sum_gy = sum_gy + gy;
                        sum_gyh = sum_gyh + gy * xhat[idx];
                        ggamma[j] = ggamma[j] + g[idx] * xhat[idx];
                        gbeta[j] = gbeta[j] + g[idx];
                    }
                    let m1 = sum_gy / dn;
                    let m2 = sum_gyh / dn;
                    for j in 0..d {
                        let idx = r * d + j;
                        let gy = g[idx] * gm[j];
                        gx[idx] = (gy - m1 - xhat[idx] * m2) * rstds[r];
                    }
                }
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let half = T::from_f64(0.5);
        // tanh-based form is stable for large |x|
        let out: Vec<T> =
            self.data().iter().map(|&x| half * ((half * x).tanh() + T::one())).collect();
        let y = out.clone();
        let track = self.requires_grad();
        self.record(
            out,
            self.shape(),
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                vec![g.iter().zip(&y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)).collect()]
            }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        let x = self.data();
        let out: Vec<T> = x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let track = self.requires_grad();
        self.record(
            out,
            self.shape(),
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                vec![g
                    .iter()
                    .zip(&x)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect()]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let x = self.data();
        let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let out: Vec<T> = x
            .iter()
            .map(|&v| {
                let inner = c * (v + k * v * v * v);
                half * v * (T::one() + inner.tanh())
            })
            .collect();
        let track = self.requires_grad();
        self.record(
            out,
            self.shape(),
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                let three = T::from_f64(3.0);
                vec![g
                    .iter()
                    .zip(&x)
                    .map(|(&gi, &v)| {
                        let inner = c * (v + k * v * v * v);
                        let t = inner.tanh();
                        let sech2 = T::one() - t * t;
                        let dinner = c * (T::one() + three * k * v * v);
                        gi * (half * (T::one() + t) + half * v * sech2 * dinner)
                    })
                    .collect()]
            }),
        )
    }

    /// Causal dilated 1-D convolution.
    ///
    /// `self` is `[t_len, c_in]`, `kernels` is `[c_out, c_in, k]`, `bias`
    /// is `[c_out]`. Left zero-padding of `(k-1)*dilation` keeps the
    /// output length equal to the input length; output at position t
    /// depends only on inputs at positions <= t.
    pub fn conv1d_causal(
        &self,
        kernels: &Tensor<T>,
        bias: &Tensor<T>,
        dilation: usize,
    ) -> Result<Tensor<T>> {
        self.same_tape(kernels)?;
        self.same_tape(bias)?;
        if dilation == 0 {
            return Err(Error::invalid("conv1d_causal dilation must be >= 1"));
        }
        let xs = self.shape();
        let ks = kernels.shape();
        if xs.len() != 2 || ks.len() != 3 || ks[1] != xs[1] {
            return Err(Error::shape(format!(
                "conv1d_causal input {:?} vs kernels {:?} (want [T,Cin] and [Cout,Cin,K])",
                xs, ks
            )));
        }
        let (t_len, c_in) = (xs[0], xs[1]);
        let (c_out, k) = (ks[0], ks[2]);
        if bias.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv1d_causal bias {:?}, want [{}]",
                bias.shape(),
                c_out
            )));
        }
        let pad = (k - 1) * dilation;
        if pad >= t_len + pad + 1 {
            // unreachable with k>=1; kept for the explicit contract
            return Err(Error::shape("kernel longer than padded input"));
        }
        let x = self.data();
        let w = kernels.data();
        let b = bias.data();
        let mut out = vec![T::zero(); t_len * c_out];
        for t in 0..t_len {
            for co in 0..c_out {
                let mut acc = b[co];
                for tap in 0..k {
                    // tap k-1 lands on t, earlier taps reach back in time
                    let offset = (k - 1 - tap) * dilation;
                    if offset > t {
                        continue; // in the zero-padded region
                    }
                    let src = t - offset;
                    for ci in 0..c_in {
                        acc = acc + w[(co * c_in + ci) * k + tap] * x[src * c_in + ci];
                    }
                }
                out[t * c_out + co] = acc;
            }
        }
        let track = self.requires_grad() || kernels.requires_grad() || bias.requires_grad();
        Ok(self.record(
            out,
            vec![t_len, c_out],
            vec![self.id, kernels.id, bias.id],
            track,
            Box::new(move |g: &[T]| {
                let mut gx = vec![T::zero(); t_len * c_in];
                let mut gw = vec![T::zero(); c_out * c_in * k];
                let mut gb = vec![T::zero(); c_out];
                for t in 0..t_len {
                    for co in 0..c_out {
                        let go = g[t * c_out + co];
                        gb[co] = gb[co] + go;
                        for tap in 0..k {
                            let offset = (k - 1 - tap) * dilation;
                            if offset > t {
                                continue;
                            }
                            let src = t - offset;
                            for ci in 0..c_in {
                                gw[(co * c_in + ci) * k + tap] =
                                    gw[(co * c_in + ci) * k + tap] + go * x[src * c_in + ci];
                                gx[src * c_in + ci] =
                                    gx[src * c_in + ci] + go * w[(co * c_in + ci) * k + tap];
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            }),
        ))
    }

    /// Mean over `axis`, removing that axis.
    pub fn mean_pool(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "mean_pool axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let len = shape[axis];
        let x = self.data();
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![T::zero(); numel(&out_shape)];
        let inv = T::from_f64(1.0 / len as f64);
        for (o, (base, stride)) in lanes(&shape, axis).enumerate() {
            let mut acc = T::zero();
            for i in 0..len {
                acc = acc + x[base + i * stride];
            }
            out[o] = acc * inv;
        }
        let track = self.requires_grad();
        let shape_c = shape.clone();
        let total = x.len();
        Ok(self.record(
            out,
            out_shape,
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                let mut gx = vec![T::zero(); total];
                for (o, (base, stride)) in lanes(&shape_c, axis).enumerate() {
                    for i in 0..len {
                        gx[base + i * stride] = gx[base + i * stride] + g[o] * inv;
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().fold(T::zero(), |a, &v| a + v);
        let n = self.numel();
        let track = self.requires_grad();
        self.record(
            vec![total],
            vec![1],
            vec![self.id],
            track,
            Box::new(move |g: &[T]| vec![vec![g[0]; n]]),
        )
    }

    /// Mean cross-entropy of `[batch, classes]` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("cross_entropy expects [B,C], got {:?}", s)));
        }
        let (bsz, c) = (s[0], s[1]);
        if labels.len() != bsz {
            return Err(Error::invalid(format!(
                "cross_entropy: {} labels for batch of {}",
                labels.len(),
                bsz
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "cross_entropy: label {} out of range for {} classes",
                bad, c
            )));
        }
        let x = self.data();
        let mut loss = T::zero();
        let mut probs = vec![T::zero(); x.len()];
        for r in 0..bsz {
            let row = &x[r * c..(r + 1) * c];
            let mx = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let mut sum = T::zero();
            for j in 0..c {
                sum = sum + (row[j] - mx).exp();
            }
            let lse = mx + sum.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss = loss - (row[labels[r]] - lse);
        }
        let inv_b = T::from_f64(1.0 / bsz as f64);
        loss = loss * inv_b;
        let labels = labels.to_vec();
        let track = self.requires_grad();
        Ok(self.record(
            vec![loss],
            vec![1],
            vec![self.id],
            track,
            Box::new(move |g: &[T]| {
                let g0 = g[0] * inv_b;
                let mut gx = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * c + l] = gx[r * c + l] - T::one();
                }
                for v in gx.iter_mut() {
                    *v = *v * g0;
                }
                vec![gx]
            }),
        ))
    }

    /// Reverse pass: populate gradients of every tracked tensor this
    /// scalar depends on. Gradients sum on tensor reuse.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::invalid("backward on an untracked tensor"));
        }
        let mut inner = self.tape.inner.borrow_mut();
        inner.nodes[self.id].grad = Some(vec![T::one()]);
        for id in (0..=self.id).rev() {
            let grad = match inner.nodes[id].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            let parents = inner.nodes[id].parents.clone();
            let contributions = match &inner.nodes[id].backward {
                Some(bw) => bw(&grad),
                None => continue,
            };
            for (pid, contrib) in parents.into_iter().zip(contributions) {
                if contrib.is_empty() || !inner.nodes[pid].requires_grad {
                    continue;
                }
                let node = &mut inner.nodes[pid];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a = *a + *c;
                        }
                    }
                    None => node.grad = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

/// Max relative error between the analytic gradient of `f` at `x0` and
/// central finite differences with step `h`.
///
/// `f` must be scalar-valued and deterministic; it is re-evaluated on a
/// fresh tape for every perturbed coordinate.
pub fn finite_diff_check<F>(f: F, x0: &[f64], shape: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    finite_diff_check_multi(|xs| f(&xs[0]), &[(x0.to_vec(), shape.to_vec())], h)
}

/// Multi-input variant of [`finite_diff_check`]: checks the gradient of
/// a scalar function with respect to every listed input jointly.
pub fn finite_diff_check_multi<F>(f: F, inputs: &[(Vec<f64>, Vec<usize>)], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let eval = |points: &[Vec<f64>]| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let tape: Tape<f64> = Tape::new();
        let xs: Vec<Tensor<f64>> = inputs
            .iter()
            .zip(points)
            .map(|((_, shape), data)| tape.leaf(data.clone(), shape, true))
            .collect::<Result<_>>()?;
        let y = f(&xs)?;
        if y.numel() != 1 {
            return Err(Error::invalid("finite_diff_check requires a scalar-valued function"));
        }
        let v = y.item();
        y.backward()?;
        Ok((v, xs.iter().map(|x| x.grad()).collect()))
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let (_, analytic) = eval(&base)?;

    let mut max_err: f64 = 0.0;
    for (ti, (data, _)) in inputs.iter().enumerate() {
        let grad = analytic[ti].clone().unwrap_or_else(|| vec![0.0; data.len()]);
        for i in 0..data.len() {
            let mut plus = base.clone();
            plus[ti][i] += h;
            let mut minus = base.clone();
            minus[ti][i] -= h;
            let (fp, _) = eval_value(&f, inputs, &plus)?;
            let (fm, _) = eval_value(&f, inputs, &minus)?;
            let numeric = (fp - fm) / (2.0 * h);
            let err = (grad[i] - numeric).abs() / f64::max(1.0, grad[i].abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

fn eval_value<F>(
    f: &F,
    inputs: &[(Vec<f64>, Vec<usize>)],
    points: &[Vec<f64>],
) -> Result<(f64, ())>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let tape: Tape<f64> = Tape::new();
    let xs: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(points)
        .map(|((_, shape), data)| tape.leaf(data.clone(), shape, false))
        .collect::<Result<_>>()?;
    let y = f(&xs)?;
    Ok((y.item(), ()))
}
