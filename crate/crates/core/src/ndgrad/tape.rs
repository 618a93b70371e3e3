//! Reverse-mode AD over a fixed op set.
//!
//! Forward evaluation is eager: each builder computes the output tensor and
//! records the op. `backward` replays the record in reverse, accumulating
//! vector-Jacobian products. A node receives a gradient buffer only if some
//! grad-requiring leaf is reachable from it, so pure-inference passes pay
//! nothing for parameters and velocity evaluations skip weight gradients.

use super::tensor::Tensor;
use super::NdGradError;
use crate::scalar::{gelu, gelu_grad, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        padding: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        padding: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Relu {
        x: usize,
    },
    Gelu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Flatten {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Mse {
        pred: usize,
        target: usize,
    },
    BceWithLogits {
        logits: usize,
        labels: usize,
    },
}

enum Slot<'a, F> {
    Owned(Tensor<F>),
    Borrowed(&'a Tensor<F>),
}

impl<'a, F> Slot<'a, F> {
    #[inline]
    fn get(&self) -> &Tensor<F> {
        match self {
            Slot::Owned(t) => t,
            Slot::Borrowed(t) => t,
        }
    }
}

struct Node<'a, F> {
    value: Slot<'a, F>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'a, F: Scalar> {
    nodes: Vec<Node<'a, F>>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }
}

// ── slice kernels ───────────────────────────────────────────────────
// Written so the inner loops stay branch-free and vectorize; `dot` keeps
// independent accumulator lanes because strict FP forbids reassociation.

#[inline]
fn axpy<F: Scalar>(y: &mut [F], x: &[F], a: F) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    // Independent accumulator lanes; wide enough to hide FMA latency.
    const LANES: usize = 32;
    let n = a.len();
    let mut acc = [F::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let i = c * LANES;
        for (l, acc_l) in acc.iter_mut().enumerate() {
            *acc_l = *acc_l + a[i + l] * b[i + l];
        }
    }
    let mut s = F::zero();
    for v in acc {
        s += v;
    }
    for i in chunks * LANES..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn sum<F: Scalar>(a: &[F]) -> F {
    const LANES: usize = 8;
    let n = a.len();
    let mut acc = [F::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let i = c * LANES;
        for (l, acc_l) in acc.iter_mut().enumerate() {
            *acc_l = *acc_l + a[i + l];
        }
    }
    let mut s = F::zero();
    for v in acc {
        s += v;
    }
    for &v in &a[chunks * LANES..n] {
        s += v;
    }
    s
}

/// Overlap of `out[t] ?= x[t + shift]` for rows of length `n`:
/// returns `(lo, hi)` such that both indices stay in range for `t ∈ lo..hi`.
#[inline]
fn shifted_range(n: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = ((n as isize - shift).min(n as isize)).max(0) as usize;
    (lo, hi.max(lo))
}

fn conv1d_forward<F: Scalar>(
    x: &[F],
    w: &[F],
    b: &[F],
    c_in: usize,
    c_out: usize,
    k: usize,
    t_len: usize,
    padding: usize,
) -> Vec<F> {
    let mut out = vec![F::zero(); c_out * t_len];
    for o in 0..c_out {
        let orow = &mut out[o * t_len..(o + 1) * t_len];
        orow.fill(b[o]);
        for ci in 0..c_in {
            let xrow = &x[ci * t_len..(ci + 1) * t_len];
            for j in 0..k {
                let wv = w[(o * c_in + ci) * k + j];
                let shift = j as isize - padding as isize;
                let (lo, hi) = shifted_range(t_len, shift);
                if lo < hi {
                    let xo = (lo as isize + shift) as usize;
                    axpy(&mut orow[lo..hi], &xrow[xo..xo + (hi - lo)], wv);
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward<F: Scalar>(
    d_out: &[F],
    x: &[F],
    w: &[F],
    c_in: usize,
    c_out: usize,
    k: usize,
    t_len: usize,
    padding: usize,
    d_x: Option<&mut [F]>,
    d_w: Option<&mut [F]>,
    d_b: Option<&mut [F]>,
) {
    if let Some(d_b) = d_b {
        for o in 0..c_out {
            d_b[o] += sum(&d_out[o * t_len..(o + 1) * t_len]);
        }
    }
    if let Some(d_w) = d_w {
        for o in 0..c_out {
            let drow = &d_out[o * t_len..(o + 1) * t_len];
            for ci in 0..c_in {
                let xrow = &x[ci * t_len..(ci + 1) * t_len];
                for j in 0..k {
                    let shift = j as isize - padding as isize;
                    let (lo, hi) = shifted_range(t_len, shift);
                    if lo < hi {
                        let xo = (lo as isize + shift) as usize;
                        d_w[(o * c_in + ci) * k + j] +=
                            dot(&drow[lo..hi], &xrow[xo..xo + (hi - lo)]);
                    }
                }
            }
        }
    }
    if let Some(d_x) = d_x {
        for o in 0..c_out {
            let drow = &d_out[o * t_len..(o + 1) * t_len];
            for ci in 0..c_in {
                let dxrow = &mut d_x[ci * t_len..(ci + 1) * t_len];
                for j in 0..k {
                    let wv = w[(o * c_in + ci) * k + j];
                    let shift = j as isize - padding as isize;
                    let (lo, hi) = shifted_range(t_len, shift);
                    if lo < hi {
                        let xo = (lo as isize + shift) as usize;
                        axpy(&mut dxrow[xo..xo + (hi - lo)], &drow[lo..hi], wv);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<F: Scalar>(
    x: &[F],
    w: &[F],
    b: &[F],
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    wid: usize,
    padding: usize,
) -> Vec<F> {
    let plane = h * wid;
    let mut out = vec![F::zero(); c_out * plane];
    for o in 0..c_out {
        let oplane = &mut out[o * plane..(o + 1) * plane];
        oplane.fill(b[o]);
        for ci in 0..c_in {
            let xplane = &x[ci * plane..(ci + 1) * plane];
            for kh in 0..k {
                let sh = kh as isize - padding as isize;
                let (rlo, rhi) = shifted_range(h, sh);
                for kw in 0..k {
                    let wv = w[((o * c_in + ci) * k + kh) * k + kw];
                    let sw = kw as isize - padding as isize;
                    let (clo, chi) = shifted_range(wid, sw);
                    if clo >= chi {
                        continue;
                    }
                    for r in rlo..rhi {
                        let xr = (r as isize + sh) as usize;
                        let xo = xr * wid + (clo as isize + sw) as usize;
                        axpy(
                            &mut oplane[r * wid + clo..r * wid + chi],
                            &xplane[xo..xo + (chi - clo)],
                            wv,
                        );
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<F: Scalar>(
    d_out: &[F],
    x: &[F],
    w: &[F],
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    wid: usize,
    padding: usize,
    d_x: Option<&mut [F]>,
    d_w: Option<&mut [F]>,
    d_b: Option<&mut [F]>,
) {
    let plane = h * wid;
    if let Some(d_b) = d_b {
        for o in 0..c_out {
            d_b[o] += sum(&d_out[o * plane..(o + 1) * plane]);
        }
    }
    if let Some(d_w) = d_w {
        for o in 0..c_out {
            let dplane = &d_out[o * plane..(o + 1) * plane];
            for ci in 0..c_in {
                let xplane = &x[ci * plane..(ci + 1) * plane];
                for kh in 0..k {
                    let sh = kh as isize - padding as isize;
                    let (rlo, rhi) = shifted_range(h, sh);
                    for kw in 0..k {
                        let sw = kw as isize - padding as isize;
                        let (clo, chi) = shifted_range(wid, sw);
                        if clo >= chi {
                            continue;
                        }
                        let mut acc = F::zero();
                        for r in rlo..rhi {
                            let xr = (r as isize + sh) as usize;
                            let xo = xr * wid + (clo as isize + sw) as usize;
                            acc += dot(
                                &dplane[r * wid + clo..r * wid + chi],
                                &xplane[xo..xo + (chi - clo)],
                            );
                        }
                        d_w[((o * c_in + ci) * k + kh) * k + kw] += acc;
                    }
                }
            }
        }
    }
    if let Some(d_x) = d_x {
        for o in 0..c_out {
            let dplane = &d_out[o * plane..(o + 1) * plane];
            for ci in 0..c_in {
                let dxplane = &mut d_x[ci * plane..(ci + 1) * plane];
                for kh in 0..k {
                    let sh = kh as isize - padding as isize;
                    let (rlo, rhi) = shifted_range(h, sh);
                    for kw in 0..k {
                        let wv = w[((o * c_in + ci) * k + kh) * k + kw];
                        let sw = kw as isize - padding as isize;
                        let (clo, chi) = shifted_range(wid, sw);
                        if clo >= chi {
                            continue;
                        }
                        for r in rlo..rhi {
                            let xr = (r as isize + sh) as usize;
                            let xo = xr * wid + (clo as isize + sw) as usize;
                            axpy(
                                &mut dxplane[xo..xo + (chi - clo)],
                                &dplane[r * wid + clo..r * wid + chi],
                                wv,
                            );
                        }
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Activation and gradient buffers at realistic sequence lengths sit right
/// at glibc's default mmap threshold, turning every training pass into
/// mmap/munmap churn. Raising the thresholds keeps buffers on the free
/// lists and roughly halves pass times.
#[cfg(target_os = "linux")]
fn tune_malloc_once() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    });
}

#[cfg(not(target_os = "linux"))]
fn tune_malloc_once() {}

impl<'a, F: Scalar> Tape<'a, F> {
    pub fn new() -> Self {
        tune_malloc_once();
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.nodes[v.0].value.get()
    }

    /// Register an input tensor. Gradients propagate into it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Register a borrowed input (parameters bind here without copying).
    pub fn leaf_ref(&mut self, value: &'a Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Slot::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Slot::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn flows(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn check_conv_params(
        op: &'static str,
        k: usize,
        padding: usize,
    ) -> Result<(), NdGradError> {
        let _ = op;
        if k % 2 == 0 {
            return Err(NdGradError::EvenKernel(k));
        }
        if padding != (k - 1) / 2 {
            return Err(NdGradError::BadPadding {
                padding,
                expected: (k - 1) / 2,
            });
        }
        Ok(())
    }

    /// 1-D cross-correlation with zero padding; length-preserving.
    /// `x: [C_in, T]`, `w: [C_out, C_in, K]`, `b: [C_out]` → `[C_out, T]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var, NdGradError> {
        let (xs, ws, bs) = (
            self.nodes[x.0].value.get().shape().to_vec(),
            self.nodes[w.0].value.get().shape().to_vec(),
            self.nodes[b.0].value.get().shape().to_vec(),
        );
        if xs.len() != 2 {
            return Err(NdGradError::RankMismatch {
                op: "conv1d",
                expected: 2,
                found: xs,
            });
        }
        if ws.len() != 3 {
            return Err(NdGradError::RankMismatch {
                op: "conv1d",
                expected: 3,
                found: ws,
            });
        }
        if ws[1] != xs[0] {
            return Err(NdGradError::ShapeMismatch {
                op: "conv1d",
                axis: "input channels",
                expected: ws[1],
                found: xs[0],
            });
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(NdGradError::ShapeMismatch {
                op: "conv1d",
                axis: "output channels",
                expected: ws[0],
                found: if bs.is_empty() { 0 } else { bs[0] },
            });
        }
        Self::check_conv_params("conv1d", ws[2], padding)?;
        let (c_in, c_out, k, t_len) = (xs[0], ws[0], ws[2], xs[1]);
        let data = conv1d_forward(
            self.nodes[x.0].value.get().data(),
            self.nodes[w.0].value.get().data(),
            self.nodes[b.0].value.get().data(),
            c_in,
            c_out,
            k,
            t_len,
            padding,
        );
        let value = Tensor::new(vec![c_out, t_len], data)?;
        let rg = self.flows(&[x.0, w.0, b.0]);
        Ok(self.push(
            value,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
                padding,
            },
            rg,
        ))
    }

    /// 2-D analogue of [`Tape::conv1d`].
    /// `x: [C_in, H, W]`, `w: [C_out, C_in, K, K]`, `b: [C_out]` → `[C_out, H, W]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var, NdGradError> {
        let (xs, ws, bs) = (
            self.nodes[x.0].value.get().shape().to_vec(),
            self.nodes[w.0].value.get().shape().to_vec(),
            self.nodes[b.0].value.get().shape().to_vec(),
        );
        if xs.len() != 3 {
            return Err(NdGradError::RankMismatch {
                op: "conv2d",
                expected: 3,
                found: xs,
            });
        }
        if ws.len() != 4 {
            return Err(NdGradError::RankMismatch {
                op: "conv2d",
                expected: 4,
                found: ws,
            });
        }
        if ws[1] != xs[0] {
            return Err(NdGradError::ShapeMismatch {
                op: "conv2d",
                axis: "input channels",
                expected: ws[1],
                found: xs[0],
            });
        }
        if ws[2] != ws[3] {
            return Err(NdGradError::ShapeMismatch {
                op: "conv2d",
                axis: "kernel extent",
                expected: ws[2],
                found: ws[3],
            });
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(NdGradError::ShapeMismatch {
                op: "conv2d",
                axis: "output channels",
                expected: ws[0],
                found: if bs.is_empty() { 0 } else { bs[0] },
            });
        }
        Self::check_conv_params("conv2d", ws[2], padding)?;
        let (c_in, c_out, k, h, wid) = (xs[0], ws[0], ws[2], xs[1], xs[2]);
        let data = conv2d_forward(
            self.nodes[x.0].value.get().data(),
            self.nodes[w.0].value.get().data(),
            self.nodes[b.0].value.get().data(),
            c_in,
            c_out,
            k,
            h,
            wid,
            padding,
        );
        let value = Tensor::new(vec![c_out, h, wid], data)?;
        let rg = self.flows(&[x.0, w.0, b.0]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                padding,
            },
            rg,
        ))
    }

    /// Dense projection: `x: [N]`, `w: [M, N]`, `b: [M]` → `[M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NdGradError> {
        let (xs, ws, bs) = (
            self.nodes[x.0].value.get().shape().to_vec(),
            self.nodes[w.0].value.get().shape().to_vec(),
            self.nodes[b.0].value.get().shape().to_vec(),
        );
        if xs.len() != 1 {
            return Err(NdGradError::RankMismatch {
                op: "linear",
                expected: 1,
                found: xs,
            });
        }
        if ws.len() != 2 || ws[1] != xs[0] {
            return Err(NdGradError::ShapeMismatch {
                op: "linear",
                axis: "input features",
                expected: if ws.len() == 2 { ws[1] } else { 0 },
                found: xs[0],
            });
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(NdGradError::ShapeMismatch {
                op: "linear",
                axis: "output features",
                expected: ws[0],
                found: if bs.is_empty() { 0 } else { bs[0] },
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let xv = self.nodes[x.0].value.get().data();
        let wv = self.nodes[w.0].value.get().data();
        let bv = self.nodes[b.0].value.get().data();
        let mut out = vec![F::zero(); m];
        for o in 0..m {
            out[o] = bv[o] + dot(&wv[o * n..(o + 1) * n], xv);
        }
        let value = Tensor::new(vec![m], out)?;
        let rg = self.flows(&[x.0, w.0, b.0]);
        Ok(self.push(
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<F> = self.nodes[x.0]
            .value
            .get()
            .data()
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let value = Tensor::new(self.nodes[x.0].value.get().shape().to_vec(), data).unwrap();
        let rg = self.flows(&[x.0]);
        self.push(value, Op::Relu { x: x.0 }, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data: Vec<F> = self.nodes[x.0].value.get().data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor::new(self.nodes[x.0].value.get().shape().to_vec(), data).unwrap();
        let rg = self.flows(&[x.0]);
        self.push(value, Op::Gelu { x: x.0 }, rg)
    }

    fn elementwise_shapes(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Vec<usize>, NdGradError> {
        let sa = self.nodes[a.0].value.get().shape();
        let sb = self.nodes[b.0].value.get().shape();
        if sa != sb {
            return Err(NdGradError::ShapeMismatch {
                op,
                axis: "elementwise operand",
                expected: sa.iter().product(),
                found: sb.iter().product(),
            });
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdGradError> {
        let shape = self.elementwise_shapes("add", a, b)?;
        let data: Vec<F> = self.nodes[a.0]
            .value
            .get()
            .data()
            .iter()
            .zip(self.nodes[b.0].value.get().data())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.flows(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdGradError> {
        let shape = self.elementwise_shapes("mul", a, b)?;
        let data: Vec<F> = self.nodes[a.0]
            .value
            .get()
            .data()
            .iter()
            .zip(self.nodes[b.0].value.get().data())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.flows(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = sum(self.nodes[x.0].value.get().data());
        let rg = self.flows(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.get().numel();
        let s = sum(self.nodes[x.0].value.get().data()) / F::cast(n as f64);
        let rg = self.flows(&[x.0]);
        self.push(Tensor::scalar(s), Op::Mean { x: x.0 }, rg)
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.get().clone();
        let n = value.numel();
        let value = value.reshape(vec![n]).unwrap();
        let rg = self.flows(&[x.0]);
        self.push(value, Op::Flatten { x: x.0 }, rg)
    }

    /// Concatenate along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, NdGradError> {
        assert!(!xs.is_empty(), "concat of zero tensors");
        let first = self.nodes[xs[0].0].value.get().shape().to_vec();
        let trailing: usize = first[1..].iter().product();
        let mut lead = 0usize;
        let mut data = Vec::new();
        for v in xs {
            let s = self.nodes[v.0].value.get().shape();
            let t: usize = s[1..].iter().product();
            if s.len() != first.len() || t != trailing {
                return Err(NdGradError::ShapeMismatch {
                    op: "concat",
                    axis: "trailing extents",
                    expected: trailing,
                    found: t,
                });
            }
            lead += s[0];
            data.extend_from_slice(self.nodes[v.0].value.get().data());
        }
        let mut shape = first;
        shape[0] = lead;
        let rg = self.flows(&xs.iter().map(|v| v.0).collect::<Vec<_>>());
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
            },
            rg,
        ))
    }

    /// Mean squared error over all elements; scalar output.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NdGradError> {
        self.elementwise_shapes("mse", pred, target)?;
        let n = self.nodes[pred.0].value.get().numel();
        let mut acc = F::zero();
        for (&p, &t) in self.nodes[pred.0]
            .value
            .get()
            .data()
            .iter()
            .zip(self.nodes[target.0].value.get().data())
        {
            let d = p - t;
            acc += d * d;
        }
        let value = Tensor::scalar(acc / F::cast(n as f64));
        let rg = self.flows(&[pred.0, target.0]);
        Ok(self.push(
            value,
            Op::Mse {
                pred: pred.0,
                target: target.0,
            },
            rg,
        ))
    }

    /// Numerically stable binary cross-entropy on logits, mean-reduced.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Var) -> Result<Var, NdGradError> {
        self.elementwise_shapes("bce_with_logits", logits, labels)?;
        let n = self.nodes[logits.0].value.get().numel();
        let mut acc = F::zero();
        for (&l, &y) in self.nodes[logits.0]
            .value
            .get()
            .data()
            .iter()
            .zip(self.nodes[labels.0].value.get().data())
        {
            // max(l, 0) - l*y + ln(1 + exp(-|l|))
            let pos = if l > F::zero() { l } else { F::zero() };
            acc += pos - l * y + (F::one() + (-l.abs()).exp()).ln();
        }
        let value = Tensor::scalar(acc / F::cast(n as f64));
        let rg = self.flows(&[logits.0, labels.0]);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits: logits.0,
                labels: labels.0,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradient buffers are produced for
    /// every reachable node whose subgraph contains a grad-requiring leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NdGradError> {
        let numel = self.nodes[loss.0].value.get().numel();
        if numel != 1 {
            return Err(NdGradError::NonScalarLoss { numel });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let d_out = grads[id].take().unwrap();
            self.backprop_node(id, &d_out, &mut grads);
            grads[id] = Some(d_out);
        }
        Ok(Gradients { grads })
    }

    fn grad_buf<'g>(
        &self,
        grads: &'g mut [Option<Vec<F>>],
        id: usize,
    ) -> Option<&'g mut Vec<F>> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        if grads[id].is_none() {
            grads[id] = Some(vec![F::zero(); self.nodes[id].value.get().numel()]);
        }
        grads[id].as_mut()
    }

    fn backprop_node(&self, id: usize, d_out: &[F], grads: &mut [Option<Vec<F>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, padding } => {
                let xs = self.nodes[*x].value.get().shape();
                let ws = self.nodes[*w].value.get().shape();
                let (c_in, t_len, c_out, k) = (xs[0], xs[1], ws[0], ws[2]);
                // Split borrows: take each optional buffer separately.
                let mut d_x = if self.nodes[*x].requires_grad {
                    Some(
                        grads[*x]
                            .take()
                            .unwrap_or_else(|| vec![F::zero(); c_in * t_len]),
                    )
                } else {
                    None
                };
                let mut d_w = if self.nodes[*w].requires_grad {
                    Some(
                        grads[*w]
                            .take()
                            .unwrap_or_else(|| vec![F::zero(); c_out * c_in * k]),
                    )
                } else {
                    None
                };
                let mut d_b = if self.nodes[*b].requires_grad {
                    Some(grads[*b].take().unwrap_or_else(|| vec![F::zero(); c_out]))
                } else {
                    None
                };
                conv1d_backward(
                    d_out,
                    self.nodes[*x].value.get().data(),
                    self.nodes[*w].value.get().data(),
                    c_in,
                    c_out,
                    k,
                    t_len,
                    *padding,
                    d_x.as_deref_mut(),
                    d_w.as_deref_mut(),
                    d_b.as_deref_mut(),
                );
                if let Some(buf) = d_x {
                    grads[*x] = Some(buf);
                }
                if let Some(buf) = d_w {
                    grads[*w] = Some(buf);
                }
                if let Some(buf) = d_b {
                    grads[*b] = Some(buf);
                }
            }
            Op::Conv2d { x, w, b, padding } => {
                let xs = self.nodes[*x].value.get().shape();
                let ws = self.nodes[*w].value.get().shape();
                let (c_in, h, wid, c_out, k) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
                let mut d_x = if self.nodes[*x].requires_grad {
                    Some(
                        grads[*x]
                            .take()
                            .unwrap_or_else(|| vec![F::zero(); c_in * h * wid]),
                    )
                } else {
                    None
                };
                let mut d_w = if self.nodes[*w].requires_grad {
                    Some(
                        grads[*w]
                            .take()
                            .unwrap_or_else(|| vec![F::zero(); c_out * c_in * k * k]),
                    )
                } else {
                    None
                };
                let mut d_b = if self.nodes[*b].requires_grad {
                    Some(grads[*b].take().unwrap_or_else(|| vec![F::zero(); c_out]))
                } else {
                    None
                };
                conv2d_backward(
                    d_out,
                    self.nodes[*x].value.get().data(),
                    self.nodes[*w].value.get().data(),
                    c_in,
                    c_out,
                    k,
                    h,
                    wid,
                    *padding,
                    d_x.as_deref_mut(),
                    d_w.as_deref_mut(),
                    d_b.as_deref_mut(),
                );
                if let Some(buf) = d_x {
                    grads[*x] = Some(buf);
                }
                if let Some(buf) = d_w {
                    grads[*w] = Some(buf);
                }
                if let Some(buf) = d_b {
                    grads[*b] = Some(buf);
                }
            }
            Op::Linear { x, w, b } => {
                let ws = self.nodes[*w].value.get().shape();
                let (m, n) = (ws[0], ws[1]);
                if self.nodes[*x].requires_grad {
                    let wd = self.nodes[*w].value.get().data();
                    let mut buf = grads[*x].take().unwrap_or_else(|| vec![F::zero(); n]);
                    for o in 0..m {
                        axpy(&mut buf, &wd[o * n..(o + 1) * n], d_out[o]);
                    }
                    grads[*x] = Some(buf);
                }
                if self.nodes[*w].requires_grad {
                    let xd = self.nodes[*x].value.get().data();
                    let mut buf = grads[*w].take().unwrap_or_else(|| vec![F::zero(); m * n]);
                    for o in 0..m {
                        axpy(&mut buf[o * n..(o + 1) * n], xd, d_out[o]);
                    }
                    grads[*w] = Some(buf);
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for (g, &d) in buf.iter_mut().zip(d_out) {
                        *g += d;
                    }
                }
            }
            Op::Relu { x } => {
                let xd = self.nodes[*x].value.get().data();
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for i in 0..xd.len() {
                        if xd[i] > F::zero() {
                            buf[i] += d_out[i];
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xd = self.nodes[*x].value.get().data();
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for i in 0..xd.len() {
                        buf[i] += d_out[i] * gelu_grad(xd[i]);
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for (g, &d) in buf.iter_mut().zip(d_out) {
                        *g += d;
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for (g, &d) in buf.iter_mut().zip(d_out) {
                        *g += d;
                    }
                }
            }
            Op::Mul { a, b } => {
                let ad = self.nodes[*a].value.get().data();
                let bd = self.nodes[*b].value.get().data();
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for i in 0..bd.len() {
                        buf[i] += d_out[i] * bd[i];
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    for i in 0..ad.len() {
                        buf[i] += d_out[i] * ad[i];
                    }
                }
            }
            Op::Sum { x } => {
                let d = d_out[0];
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for g in buf.iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::Mean { x } => {
                let n = self.nodes[*x].value.get().numel();
                let d = d_out[0] / F::cast(n as f64);
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for g in buf.iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::Flatten { x } => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (g, &d) in buf.iter_mut().zip(d_out) {
                        *g += d;
                    }
                }
            }
            Op::Concat { xs } => {
                let mut offset = 0;
                for &xi in xs {
                    let n = self.nodes[xi].value.get().numel();
                    if let Some(buf) = self.grad_buf(grads, xi) {
                        for (g, &d) in buf.iter_mut().zip(&d_out[offset..offset + n]) {
                            *g += d;
                        }
                    }
                    offset += n;
                }
            }
            Op::Mse { pred, target } => {
                let n = self.nodes[*pred].value.get().numel();
                let scale = d_out[0] * F::cast(2.0 / n as f64);
                let pd = self.nodes[*pred].value.get().data();
                let td = self.nodes[*target].value.get().data();
                if let Some(buf) = self.grad_buf(grads, *pred) {
                    for i in 0..n {
                        buf[i] += scale * (pd[i] - td[i]);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *target) {
                    for i in 0..n {
                        buf[i] -= scale * (pd[i] - td[i]);
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                let n = self.nodes[*logits].value.get().numel();
                let scale = d_out[0] / F::cast(n as f64);
                let ld = self.nodes[*logits].value.get().data();
                let yd = self.nodes[*labels].value.get().data();
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    for i in 0..n {
                        let sig = F::one() / (F::one() + (-ld[i]).exp());
                        buf[i] += scale * (sig - yd[i]);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *labels) {
                    for i in 0..n {
                        buf[i] -= scale * ld[i];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    /// Direct sliding-window oracle, independent of the axpy formulation.
    fn conv1d_oracle(x: &[f64], w: &[f64], bias: f64, pad: usize) -> Vec<f64> {
        let t_len = x.len();
        (0..t_len)
            .map(|t| {
                let mut acc = bias;
                for (j, &wv) in w.iter().enumerate() {
                    let idx = t as isize + j as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < t_len {
                        acc += wv * x[idx as usize];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn conv1d_matches_sliding_window_oracle() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap(), false);
        let w = tape.leaf(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap(), false);
        let b = tape.leaf(t1(&[0.0]), false);
        let out = tape.conv1d(x, w, b, 1).unwrap();
        let expected = conv1d_oracle(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.0, -1.0], 0.0, 1);
        assert_eq!(expected, vec![-1.0, -2.0, -2.0, 2.0]);
        assert_eq!(tape.value(out).data(), expected.as_slice());
    }

    #[test]
    fn conv1d_ones_kernel_on_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 5], vec![1.0; 5]).unwrap(), false);
        let w = tape.leaf(Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap(), false);
        let b = tape.leaf(t1(&[0.0]), false);
        let out = tape.conv1d(x, w, b, 1).unwrap();
        let expected = conv1d_oracle(&[1.0; 5], &[1.0; 3], 0.0, 1);
        assert_eq!(expected, vec![2.0, 3.0, 3.0, 3.0, 2.0]);
        assert_eq!(tape.value(out).data(), expected.as_slice());
    }

    #[test]
    fn conv1d_zero_kernel_gives_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 6], (0..12).map(|v| v as f64).collect()).unwrap(), false);
        let w = tape.leaf(Tensor::zeros(vec![3, 2, 3]), false);
        let b = tape.leaf(Tensor::zeros(vec![3]), false);
        let out = tape.conv1d(x, w, b, 1).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_rejects_channel_mismatch() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 4]), false);
        let w = tape.leaf(Tensor::zeros(vec![1, 3, 3]), false);
        let b = tape.leaf(Tensor::zeros(vec![1]), false);
        match tape.conv1d(x, w, b, 1) {
            Err(NdGradError::ShapeMismatch { axis, .. }) => {
                assert_eq!(axis, "input channels")
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let x = tape.leaf(Tensor::new(vec![1, 3, 3], data.clone()).unwrap(), false);
        let mut kw = vec![0.0; 9];
        kw[4] = 1.0; // center tap
        let w = tape.leaf(Tensor::new(vec![1, 1, 3, 3], kw).unwrap(), false);
        let b = tape.leaf(t1(&[0.0]), false);
        let out = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(out).data(), data.as_slice());
    }

    #[test]
    fn conv2d_box_kernel_counts_neighbours() {
        // All-ones 4x4 input, 3x3 all-ones kernel: corner 4, edge 6, interior 9.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 4, 4], vec![1.0; 16]).unwrap(), false);
        let w = tape.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap(), false);
        let b = tape.leaf(t1(&[0.0]), false);
        let out = tape.conv2d(x, w, b, 1).unwrap();
        let o = tape.value(out).data();
        assert_eq!(o[0], 4.0);
        assert_eq!(o[1], 6.0);
        assert_eq!(o[5], 9.0);
        assert_eq!(o[15], 4.0);
    }

    #[test]
    fn conv2d_zero_input_broadcasts_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 3, 3]), false);
        let w = tape.leaf(Tensor::new(vec![2, 1, 3, 3], vec![0.5; 18]).unwrap(), false);
        let b = tape.leaf(t1(&[1.5, -2.0]), false);
        let out = tape.conv2d(x, w, b, 1).unwrap();
        let o = tape.value(out).data();
        assert!(o[..9].iter().all(|&v| v == 1.5));
        assert!(o[9..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn relu_and_gelu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 2.0, 0.0]), false);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);
        let g = tape.gelu(x);
        assert_eq!(tape.value(g).data()[2], 0.0);
        assert!((tape.value(g).data()[1] - crate::scalar::gelu(2.0f64)).abs() < 1e-15);
    }

    #[test]
    fn backward_linear_grad_is_input() {
        // loss = sum(w . x) with x fixed  =>  d loss / d w = x
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, -2.0, 3.0]), false);
        let w = tape.leaf(t1(&[0.5, 0.5, 0.5]), true);
        let prod = tape.mul(w, x).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0, -2.0, 3.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let y = tape.relu(x);
        match tape.backward(y) {
            Err(NdGradError::NonScalarLoss { numel }) => assert_eq!(numel, 2),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn grad_is_zero_for_unused_parameter() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), false);
        let w = tape.leaf(t1(&[1.0, 1.0]), true);
        let _unused = tape.relu(w);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        // No path from w to the loss: no gradient buffer at all.
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn bce_with_logits_matches_reference() {
        let mut tape = Tape::new();
        let l = tape.leaf(t1(&[0.3]), true);
        let y = tape.leaf(t1(&[1.0]), false);
        let loss = tape.bce_with_logits(l, y).unwrap();
        let expected = (1.0f64 + (-0.3f64).exp()).ln();
        assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
        let grads = tape.backward(loss).unwrap();
        let sig = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((grads.get(l).unwrap()[0] - (sig - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn concat_stacks_and_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap(), true);
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[3, 2]);
        let s = tape.sum(c);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn tape_works_with_f32() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap(), true);
        let y = tape.gelu(x);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().len(), 2);
    }
}
